"""Exception types shared across the package."""


class MagpackError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MagpackError):
    """Invalid or inconsistent configuration values."""


class QuadratureError(MagpackError):
    """Quadrature order below the documented minimum."""


class OutOfDomainError(MagpackError):
    """Evaluation point outside the supported domain (wrong dimension, stamp
    touching the box boundary, lattice outside the grid, ...)."""


class FamilyError(MagpackError):
    """Symbol family does not support the requested operation."""


class SizeGuardError(MagpackError):
    """Brute-force oracle invoked beyond its size guard."""


class BoxExitError(MagpackError):
    """A flowed wavepacket centre left the computational box."""


class BlowUpError(MagpackError):
    """Trajectory escaped the sanity bound (non-finite or explosive state)."""


class SolverError(MagpackError):
    """Linear solver failed to reach the requested tolerance."""


class VolterraDivergenceError(MagpackError):
    """Picard iteration failed to contract; retry with smaller T or larger lambda."""


class BoundaryLeakError(MagpackError):
    """Reference evolution reached the absorbing region with too much mass."""
