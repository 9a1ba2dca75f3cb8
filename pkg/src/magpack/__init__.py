"""Phase-space toolkit for magnetic Schrodinger equations.

Transversal-gauge potentials and phases, magnetic wavepacket transforms,
gauge-covariant quantisation, twisted Hamiltonian flows, a frozen-Gaussian
parametrix with Volterra correction, and a link-variable reference solver.
"""

__version__ = "0.1.0"

from .errors import (BlowUpError, BoundaryLeakError, BoxExitError, ConfigError,
                     FamilyError, MagpackError, OutOfDomainError,
                     QuadratureError, SizeGuardError, SolverError,
                     VolterraDivergenceError)
from .fields import (BumpField, CompositeField, ConstantField, GaugeData,
                     MagneticField, TimeModulatedField, flux_gamma, make_field,
                     phase_phi, potential_at, potential_time_derivative)
from .grids import GridFunction, SpatialGrid, load_gfd, save_gfd
from .phasespace import (PhaseSpaceCoefficients, WavepacketFrame, Weight,
                         analyze, matrix_element, modulation_norm,
                         packet_on_grid, synthesize, wavepacket_eval)
from .flow import (FlowIntegrator, FlowState, SymbolH, advance, advance_path,
                   anharmonic_potential, flow_rhs, free_symbol,
                   harmonic_potential, jacobian_determinant, kinetic_potential,
                   time_average_check)
from .quantize import apply_op, apply_op_direct, covariant_derivative, kn_correction
from .propagate import (ParametrixPlan, VolterraSolution, apply_K,
                        apply_parametrix, apply_propagator, build_plan,
                        residual_R1, residual_R2, residual_R3, solve_volterra,
                        verify_flat_approximation)
from .refsolve import crank_nicolson_step, evolve, exact_solution
