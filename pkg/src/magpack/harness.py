"""Scenario registry, experiment configuration, pipelines, and reporting.

A scenario names a (field, symbol, grid, frame, initial state) bundle; a
pipeline names what to do with it.  Configs are flat INI-style key=value
sections so runs are diff-able and hand-editable.  Each pipeline writes CSV
tables (the canonical output), an optional minimal SVG line chart, and a
JSON summary carrying the config hash, version, and pass/fail verdicts.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field, asdict

import numpy as np

from . import __version__
from .errors import ConfigError, MagpackError
from .fields import GaugeData, make_field
from .flow import (FlowIntegrator, FlowState, advance, advance_path,
                   anharmonic_potential, harmonic_potential, kinetic_potential,
                   jacobian_determinant, time_average_check)
from .grids import GridFunction, SpatialGrid, load_gfd, save_gfd
from .phasespace import (WavepacketFrame, analyze, matrix_element,
                         modulation_norm, packet_on_grid, synthesize)
from .propagate import (apply_K, apply_parametrix, apply_propagator,
                        build_plan, solve_volterra, verify_flat_approximation)
from .refsolve import evolve, exact_solution

__all__ = ["ExperimentConfig", "SCENARIOS", "PIPELINES", "run_scenario",
           "compare", "scenario_config"]


# -- configuration ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str = "free"
    pipeline: str = "parametrix"
    # field
    field_kind: str = "constant"
    b: float = 0.0
    bump_amp: float = 0.5
    bump_width: float = 1.5
    rate: float = 0.5
    # symbol
    potential: str = "zero"        # zero | harmonic | anharmonic
    v2: float = 0.5
    anharm_a: float = 0.2
    half: bool = True              # kappa = 1/2 when set, else 1
    # grid
    n: int = 128
    half_width: float = 10.0
    # frame
    lam: float = 4.0
    x_halfwidth: float = 1.5
    xi_halfwidth: float = 12.0
    density: float = 1.0
    drop_tol: float = 1e-7
    # flow / times
    flow_dt: float = 1e-2
    T: float = 0.5
    n_out: int = 8
    # volterra
    n_t: int = 8
    vol_tol: float = 1e-3
    max_iter: int = 12
    # initial state (Gaussian coherent state)
    center: tuple = (0.0, 0.0)
    momentum: tuple = (1.0, 0.5)
    width: float = 0.35
    # bookkeeping
    seed: int = 1234
    workers: int = 1
    out_dir: str = "magpack_out"

    def canonical_text(self):
        items = sorted(asdict(self).items())
        return "\n".join(f"{k}={v!r}" for k, v in items)

    def sha(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    def validate(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(
                f"unknown pipeline {self.pipeline!r}; choose from "
                f"{sorted(PIPELINES)}")
        if self.lam < 1:
            raise ConfigError("frame.lam must be >= 1")
        if self.n & (self.n - 1) or self.n < 4:
            raise ConfigError("grid.n must be a power of two >= 4")
        if self.T < 0:
            raise ConfigError("scenario.T must be nonnegative")
        if self.n_t < 8:
            raise ConfigError("volterra.n_t must be at least 8")
        return self


_SECTION_KEYS = {
    "scenario": {"name": ("scenario", str), "pipeline": ("pipeline", str),
                 "t": ("T", float), "n_out": ("n_out", int),
                 "seed": ("seed", int)},
    "field": {"kind": ("field_kind", str), "b": ("b", float),
              "amp": ("bump_amp", float), "width": ("bump_width", float),
              "rate": ("rate", float)},
    "symbol": {"potential": ("potential", str), "v2": ("v2", float),
               "a": ("anharm_a", float), "half": ("half", bool)},
    "grid": {"n": ("n", int), "half_width": ("half_width", float)},
    "frame": {"lam": ("lam", float), "x_halfwidth": ("x_halfwidth", float),
              "xi_halfwidth": ("xi_halfwidth", float),
              "density": ("density", float), "drop_tol": ("drop_tol", float)},
    "flow": {"dt": ("flow_dt", float)},
    "volterra": {"n_t": ("n_t", int), "tol": ("vol_tol", float),
                 "max_iter": ("max_iter", int)},
    "state": {"center": ("center", "floats"), "momentum": ("momentum", "floats"),
              "width": ("width", float)},
    "output": {"dir": ("out_dir", str), "workers": ("workers", int)},
}


def load_config(path, base: ExperimentConfig | None = None):
    """Parse a flat INI config into an ExperimentConfig."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = base if base is not None else ExperimentConfig()
    for section in cp.sections():
        keys = _SECTION_KEYS.get(section)
        if keys is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            spec = keys.get(key)
            if spec is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, typ = spec
            try:
                if typ == "floats":
                    val = tuple(float(p) for p in raw.split(","))
                elif typ is bool:
                    val = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    val = typ(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value {raw!r} for [{section}] {key}: {exc}") from exc
            setattr(cfg, attr, val)
    return cfg.validate()


SCENARIOS = {
    # A = 0, V = 0: every residual vanishes in the continuum
    "free": dict(field_kind="constant", b=0.0, potential="zero"),
    # A = 0 harmonic oscillator: Mehler-kernel oracle.  Width 0.8 is near
    # the trap's coherent width, so the state stays inside the frame extents.
    # x_halfwidth 4 covers the trap rotation of the outer momentum nodes
    # (|xi| up to 12 swings to |x| ~ 12 sin(T) in position by t = T)
    "harmonic": dict(field_kind="constant", b=0.0, potential="harmonic",
                     v2=0.5, momentum=(1.0, 0.0), width=0.8,
                     x_halfwidth=4.0, half_width=12.0),
    # constant field only
    "constant-b": dict(field_kind="constant", b=1.0, potential="zero",
                       momentum=(1.0, 0.0)),
    # constant field + harmonic confinement: the workhorse accuracy scenario
    "landau-harmonic": dict(field_kind="constant", b=0.2, potential="harmonic",
                            v2=0.5, momentum=(1.0, 0.0), width=0.8,
                            x_halfwidth=3.0, half_width=12.0),
    # constant field + compact bump: nonzero R1, kernel-decay scenario
    "constant-bump": dict(field_kind="constant_bump", b=1.0, bump_amp=0.5,
                          bump_width=1.5, potential="zero"),
    # anharmonic bounded-Hessian well
    "anharmonic": dict(field_kind="constant", b=0.2, potential="anharmonic",
                       v2=0.5, anharm_a=0.2, x_halfwidth=2.0),
    # time-modulated constant field: exercises Adot flow term and R3
    "timedep": dict(field_kind="time_modulated", b=0.5, rate=0.5,
                    potential="harmonic", v2=0.5, width=0.8, T=0.25,
                    x_halfwidth=2.5, xi_halfwidth=16.0),
}


def scenario_config(name, **overrides):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from "
                          f"{sorted(SCENARIOS)}")
    cfg = ExperimentConfig(scenario=name)
    for k, v in {**SCENARIOS[name], **overrides}.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config attribute {k!r}")
        setattr(cfg, k, v)
    return cfg.validate()


# -- scenario object construction ---------------------------------------------

def build_gauge(cfg: ExperimentConfig):
    kw = {}
    if cfg.field_kind in ("constant", "constant_bump", "time_modulated"):
        kw["b"] = cfg.b
    if cfg.field_kind == "constant_bump":
        kw.update(amp=cfg.bump_amp, width=cfg.bump_width)
    if cfg.field_kind == "time_modulated":
        kw["rate"] = cfg.rate
    return GaugeData(make_field(cfg.field_kind, **kw))


def build_symbol(cfg: ExperimentConfig):
    kappa = 0.5 if cfg.half else 1.0
    if cfg.potential == "zero":
        return kinetic_potential(kappa=kappa)
    if cfg.potential == "harmonic":
        return harmonic_potential(v2=cfg.v2, kappa=kappa)
    if cfg.potential == "anharmonic":
        return anharmonic_potential(v2=cfg.v2, a=cfg.anharm_a, kappa=kappa)
    raise ConfigError(f"unknown potential {cfg.potential!r}")


def build_grid(cfg: ExperimentConfig):
    return SpatialGrid(n=cfg.n, half_width=cfg.half_width, dim=2)


def build_frame(cfg: ExperimentConfig, gauge=None, grid=None):
    gauge = gauge if gauge is not None else build_gauge(cfg)
    grid = grid if grid is not None else build_grid(cfg)
    return WavepacketFrame(gauge, grid, cfg.lam, cfg.x_halfwidth,
                           cfg.xi_halfwidth, density=cfg.density,
                           drop_tol=cfg.drop_tol)


def initial_state(cfg: ExperimentConfig, grid=None):
    grid = grid if grid is not None else build_grid(cfg)
    c = np.asarray(cfg.center, dtype=float)
    p = np.asarray(cfg.momentum, dtype=float)
    w = float(cfg.width)

    def fn(y):
        return (np.exp(-np.sum((y - c) ** 2, axis=-1) / (2 * w * w))
                * np.exp(1j * np.sum(p * y, axis=-1)))

    return GridFunction.from_callable(grid, fn)


def reference_oracle(cfg: ExperimentConfig, grid):
    """Closed-form oracle when one exists for the scenario, else None."""
    kappa = 0.5 if cfg.half else 1.0
    if cfg.b == 0.0 and cfg.field_kind == "constant":
        if cfg.potential == "zero":
            return exact_solution("free", grid, center=cfg.center,
                                  width=cfg.width, momentum=cfg.momentum,
                                  kappa=kappa)
        if cfg.potential == "harmonic":
            return exact_solution("harmonic", grid, center=cfg.center,
                                  width=cfg.width, momentum=cfg.momentum,
                                  kappa=kappa, v2=cfg.v2)
    return None


def reference_states(cfg: ExperimentConfig, gauge, symbol, grid, u0, times,
                     dt=None):
    """Exact-oracle states when available, else Crank-Nicolson evolution."""
    oracle = reference_oracle(cfg, grid)
    if oracle is not None:
        return [oracle(t) for t in times], "exact"
    if gauge.field.time_dependent:
        return None, "none"
    dt = dt if dt is not None else min(1e-3, grid.step ** 2)
    out = []
    u = u0
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            u = evolve(gauge, symbol, u, t_prev, t, dt=dt)
            t_prev = t
        out.append(u.copy())
    return out, "crank-nicolson"


# -- output helpers -----------------------------------------------------------

def _out_dir(cfg: ExperimentConfig):
    d = os.environ.get("MAGPACK_OUT", cfg.out_dir)
    os.makedirs(d, exist_ok=True)
    return d


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])


def write_svg(path, xs, series, title="", width=640, height=400, logy=False):
    """Minimal multi-polyline SVG chart; series is {label: ys}."""
    xs = np.asarray(xs, dtype=float)
    pad = 50
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    if logy:
        all_y = np.log10(np.maximum(np.abs(all_y), 1e-300))
    ylo, yhi = float(all_y.min()), float(all_y.max())
    if yhi - ylo < 1e-12:
        yhi = ylo + 1.0
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi - xlo < 1e-12:
        xhi = xlo + 1.0

    def sx(x):
        return pad + (x - xlo) / (xhi - xlo) * (width - 2 * pad)

    def sy(y):
        if logy:
            y = np.log10(max(abs(y), 1e-300))
        return height - pad - (y - ylo) / (yhi - ylo) * (height - 2 * pad)

    colors = ["#1f6fb2", "#b23a1f", "#2c8a4b", "#8a2c7d", "#777720"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">',
             f'<text x="{width//2}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width-2*pad}" '
             f'height="{height-2*pad}" fill="none" stroke="#999"/>']
    for ci, (label, ys) in enumerate(series.items()):
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        col = colors[ci % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{pad+6}" y="{pad+16+14*ci}" fill="{col}" '
                     f'font-size="12">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def _summary(cfg, name, passed, metrics, outdir, t_start):
    summary = {
        "scenario": cfg.scenario,
        "pipeline": name,
        "version": __version__,
        "config_sha": cfg.sha(),
        "pass": bool(passed),
        "metrics": metrics,
        "elapsed_s": round(time.time() - t_start, 2),
        "out_dir": outdir,
    }
    path = os.path.join(outdir, f"{cfg.scenario}_{name}_summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _parallel_map(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- pipelines ----------------------------------------------------------------

def transform_defects(gauge, lam, n=256, half_width=16.0, width=0.8,
                      oversample=True):
    """Isometry defect and (oversampled) inversion error for a smooth bump.

    Lattice extents scale with the coefficient spreads sqrt(w^2 + 1/lam^2)
    in position and sqrt(lam^2 + 1/w^2) in momentum so that the discarded
    phase-space tail sits below the measured defects.
    """
    grid = SpatialGrid(n=n, half_width=half_width, dim=2)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1) / (2 * width * width))
        * (1 + 0.2 * np.cos(y[..., 0])))
    xh = 4.3 * np.hypot(width, 1.0 / lam)
    xih = 4.3 * np.hypot(lam, 1.0 / width)
    frame = WavepacketFrame(gauge, grid, lam, xh, xih, drop_tol=1e-12)
    co = analyze(frame, u)
    iso = abs(co.norm_l2() - u.norm()) / u.norm()
    dense = (WavepacketFrame(gauge, grid, lam, xh, xih, density=0.5,
                             drop_tol=1e-12) if oversample else frame)
    rec = synthesize(dense, analyze(dense, u))
    inv = grid.norm(rec.values - u.values) / u.norm()
    return iso, inv


def _pipe_transform_tests(cfg: ExperimentConfig, outdir):
    gauge = build_gauge(cfg)
    rows = []
    metrics = {}
    for lam in (max(1.0, cfg.lam / 2), cfg.lam):
        iso, inv = transform_defects(gauge, lam, n=max(cfg.n, 256))
        rows.append((lam, iso, inv))
        metrics[f"isometry_lam{lam:g}"] = iso
        metrics[f"inversion_lam{lam:g}"] = inv
    write_csv(os.path.join(outdir, f"{cfg.scenario}_transform.csv"),
              ["lam", "isometry_defect", "inversion_error"], rows)
    passed = all(r[1] <= 1e-4 and r[2] <= 1e-3 for r in rows)
    return passed, metrics


def _pipe_flow_ensemble(cfg: ExperimentConfig, outdir):
    gauge = build_gauge(cfg)
    symbol = build_symbol(cfg)
    integ = FlowIntegrator(gauge, symbol, dt=cfg.flow_dt)
    rng = np.random.default_rng(cfg.seed)
    N = 64
    x0 = rng.uniform(-2, 2, size=(N, 2))
    xi0 = rng.uniform(-3, 3, size=(N, 2))
    vals = time_average_check(integ, x0, xi0, (0.0, max(cfg.T, 1.0)))
    dets = [jacobian_determinant(integ, x0[i], xi0[i], 0.0, cfg.T)
            for i in range(0, N, 16)]
    rows = [(i, float(vals[i])) for i in range(N)]
    write_csv(os.path.join(outdir, f"{cfg.scenario}_flow_ensemble.csv"),
              ["member", "time_average"], rows)
    metrics = {"time_average_max": float(vals.max()),
               "det_defect_max": float(max(abs(d - 1.0) for d in dets))}
    passed = np.isfinite(vals).all() and metrics["det_defect_max"] <= 1e-3
    return passed, metrics


def _make_plan(cfg, gauge=None, grid=None, n_out=None):
    gauge = gauge if gauge is not None else build_gauge(cfg)
    grid = grid if grid is not None else build_grid(cfg)
    symbol = build_symbol(cfg)
    frame = build_frame(cfg, gauge, grid)
    integ = FlowIntegrator(gauge, symbol, dt=cfg.flow_dt)
    u0 = initial_state(cfg, grid)
    plan = build_plan(frame, integ, u0, cfg.T,
                      cfg.n_out if n_out is None else n_out,
                      drop_tol=cfg.drop_tol, coverage="full")
    return plan, u0, gauge, symbol, grid


def _pipe_parametrix(cfg: ExperimentConfig, outdir):
    plan, u0, gauge, symbol, grid = _make_plan(cfg)
    refs, ref_kind = reference_states(cfg, gauge, symbol, grid, u0, plan.times)
    rows = []
    errs = []
    for i, t in enumerate(plan.times):
        st = apply_parametrix(plan, t)
        err = (grid.norm(st.values - refs[i].values) / refs[i].norm()
               if refs is not None else float("nan"))
        co = analyze(plan.frame, st)
        rows.append((float(t), st.norm(), st.mass_ratio,
                     modulation_norm(co, 0, 2), err, plan.retained_nodes(),
                     plan.mass_loss))
        errs.append(err)
    write_csv(os.path.join(outdir, f"{cfg.scenario}_parametrix.csv"),
              ["time", "l2", "mass_ratio", "mod_norm_02", "ref_error",
               "nodes", "mass_loss"], rows)
    write_svg(os.path.join(outdir, f"{cfg.scenario}_parametrix.svg"),
              plan.times, {"ref_error": [r[4] for r in rows]},
              title=f"parametrix error vs time ({ref_kind})", logy=True)
    metrics = {"ref_kind": ref_kind, "final_error": errs[-1],
               "t0_error": errs[0], "nodes": plan.retained_nodes()}
    passed = errs[0] <= 5e-3 if refs is not None else True
    return passed, metrics


def _pipe_volterra(cfg: ExperimentConfig, outdir):
    plan, u0, gauge, symbol, grid = _make_plan(cfg, n_out=cfg.n_t)
    vs = solve_volterra(plan, u0, cfg.T, n_t=cfg.n_t, tol=cfg.vol_tol,
                        max_iter=cfg.max_iter)
    refs, ref_kind = reference_states(cfg, gauge, symbol, grid, u0, vs.times)
    rows = []
    for i, t in enumerate(vs.times):
        sc = apply_propagator(plan, vs, t)
        err = (grid.norm(sc.values - refs[i].values) / refs[i].norm()
               if refs is not None else float("nan"))
        rows.append((float(t), sc.norm(), sc.mass_ratio, err))
    write_csv(os.path.join(outdir, f"{cfg.scenario}_volterra.csv"),
              ["time", "l2", "mass_ratio", "ref_error"], rows)
    write_csv(os.path.join(outdir, f"{cfg.scenario}_volterra_history.csv"),
              ["iteration", "update"],
              list(enumerate(vs.residual_history, start=1)))
    metrics = {"iterations": vs.iterations,
               "history": vs.residual_history,
               "ref_kind": ref_kind,
               "final_error": rows[-1][3]}
    contracting = all(b < a for a, b in zip(vs.residual_history,
                                            vs.residual_history[1:]))
    passed = contracting and (refs is None or rows[-1][3] <= 0.1)
    return passed, metrics


def _pipe_reference_compare(cfg: ExperimentConfig, outdir):
    gauge = build_gauge(cfg)
    symbol = build_symbol(cfg)
    grid = build_grid(cfg)
    u0 = initial_state(cfg, grid)
    times = np.linspace(0.0, cfg.T, cfg.n_out + 1)
    refs, ref_kind = reference_states(cfg, gauge, symbol, grid, u0, times)
    if refs is None:
        raise ConfigError("reference-compare needs a static field")
    path_a = os.path.join(outdir, f"{cfg.scenario}_reference_T.gfd")
    save_gfd(path_a, refs[-1], meta={"t": cfg.T, "kind": ref_kind})
    oracle = reference_oracle(cfg, grid)
    rows = [(float(t), refs[i].norm(),
             grid.boundary_mass(refs[i].values)) for i, t in enumerate(times)]
    metrics = {"ref_kind": ref_kind, "final_norm": rows[-1][1],
               "file": path_a}
    if ref_kind == "exact":
        # cross-check the grid solver against the closed form at T
        cn_T = evolve(gauge, symbol, u0, 0.0, cfg.T, dt=1e-3)
        metrics["cn_vs_exact"] = float(
            grid.norm(cn_T.values - refs[-1].values) / refs[-1].norm())
    write_csv(os.path.join(outdir, f"{cfg.scenario}_reference.csv"),
              ["time", "l2", "boundary_mass"], rows)
    passed = abs(rows[-1][1] - rows[0][1]) / rows[0][1] <= 1e-3
    return passed, metrics


def _pipe_kernel_decay(cfg: ExperimentConfig, outdir):
    from .flow import FlowState as _FS
    from .propagate import residual_R1, residual_R2

    gauge = build_gauge(cfg)
    symbol = build_symbol(cfg)
    grid = build_grid(cfg)
    lam = cfg.lam
    x0 = np.zeros(2)
    xi0 = np.zeros(2)

    def op_L(gf):
        st = _FS(x0, xi0, 0.0, 0.0)
        r2 = residual_R2(gauge, symbol, 0.0, st, gf)
        r1 = residual_R1(gauge, symbol, 0.0, st, gf.grid.mesh())
        return GridFunction(gf.grid, r2.values + r1 * gf.values)

    # spatial separations at fixed momentum, then momenta at fixed position;
    # the fit starts past the near-diagonal plateau and a relative floor
    # mask drops values buried in grid-quadrature noise
    seps = np.linspace(2.0, 6.0, 9)
    rows = []
    for which, mk in (("x", lambda s: ((s, 0.0), (0.0, 0.0))),
                      ("xi", lambda s: ((0.0, 0.0), (lam * s, 0.0)))):
        for L, tag in ((None, "Id"), (op_L, "R1+R2")):
            vals = _parallel_map(
                lambda s: abs(matrix_element(
                    gauge, grid, lam, 0.0, (np.array(mk(s)[0]),
                                            np.array(mk(s)[1])),
                    (x0, xi0), op=L)),
                seps, cfg.workers)
            h = (np.hypot(1.0, lam * seps) if which == "x"
                 else np.hypot(1.0, seps))
            vals = np.asarray(vals)
            good = vals > 1e-13 * vals.max()
            slope = np.polyfit(np.log(h[good]), np.log(vals[good]), 1)[0]
            rows.append((which, tag, float(slope)))
    write_csv(os.path.join(outdir, f"{cfg.scenario}_kernel_decay.csv"),
              ["axis", "operator", "slope"], rows)
    metrics = {f"slope_{r[0]}_{r[1]}": r[2] for r in rows}
    passed = all(r[2] <= -4.0 for r in rows)
    return passed, metrics


def _pipe_flat_approx(cfg: ExperimentConfig, outdir):
    gauge = build_gauge(cfg)
    symbol = build_symbol(cfg)
    grid = SpatialGrid(n=min(cfg.n, 64), half_width=min(cfg.half_width, 6.0),
                       dim=2)
    pts = [((0.0, 0.0), (0.0, 0.0)),
           ((1.0, 0.0), (0.0, 2.0)),
           ((0.5, -0.5), (1.0, 1.0))]
    rows = []
    for x, xi in pts:
        rep = verify_flat_approximation(gauge, symbol, 0.0, x, xi, cfg.lam,
                                        grid)
        rows.append((x[0], x[1], xi[0], xi[1], rep["residual"]))
    write_csv(os.path.join(outdir, f"{cfg.scenario}_flat_approx.csv"),
              ["x1", "x2", "xi1", "xi2", "residual"], rows)
    worst = max(r[4] for r in rows)
    return worst <= 5e-3, {"worst_residual": worst}


PIPELINES = {
    "transform-tests": _pipe_transform_tests,
    "flow-ensemble": _pipe_flow_ensemble,
    "parametrix": _pipe_parametrix,
    "volterra": _pipe_volterra,
    "reference-compare": _pipe_reference_compare,
    "kernel-decay": _pipe_kernel_decay,
    "flat-approx": _pipe_flat_approx,
}


def run_scenario(cfg: ExperimentConfig):
    """Execute the configured pipeline; returns the summary dict."""
    cfg.validate()
    t_start = time.time()
    outdir = _out_dir(cfg)
    np.random.seed(cfg.seed % 2**32)  # legacy consumers; pipelines use default_rng
    fn = PIPELINES[cfg.pipeline]
    passed, metrics = fn(cfg, outdir)
    return _summary(cfg, cfg.pipeline, passed, metrics, outdir, t_start)


def compare(path_a, path_b):
    """Relative L2 and max pointwise distance between two .gfd dumps."""
    ga, _ = load_gfd(path_a)
    gb, _ = load_gfd(path_b)
    if ga.grid != gb.grid:
        raise ConfigError("grid mismatch between the two .gfd files")
    denom = max(ga.norm(), 1e-300)
    rel = ga.grid.norm(ga.values - gb.values) / denom
    mx = float(np.abs(ga.values - gb.values).max())
    return {"relative_l2": float(rel), "max_pointwise": mx}
