"""Experiment driver: the reference experiment tables as presets, right-hand
sides, single runs, and CSV/JSON result emission.

All presets solve the pure (unabsorbed) Helmholtz system except table2, which
adds the same absorption to problem and preconditioner.  Tables 1-3 use the
plane-wave right-hand side, the rest the all-ones vector.  A "*" (no
convergence within the iteration cap) is serialised as outer_iters = -1 with
converged false.  Reported inner iterations are the average count per inner
GMRES invocation.
"""

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssemblyCoefficients, assemble_system
from .decomposition import build_decomposition
from .krylov import KrylovConfig, fgmres, gmres
from .mesh import (DegenerateLayoutError, build_coarse_layout, build_fine_mesh,
                   build_wavespeed, cells_for_rule, layout_from_blocks,
                   snapped_square_indices)
from .precond import build_nested_coarse_solver, build_preconditioner

RESULT_COLUMNS = ("preset", "k", "n", "mesh_rule", "precond", "alpha", "beta",
                  "scenario", "c_star", "outer_iters", "inner_iters_avg", "converged",
                  "time_total_s", "time_per_iter_s", "final_relres")

PRESETS = ("table1", "table2", "table3", "table4", "table5_multilevel",
           "table6_variable")

LARGE_K_CAP = 60          # pollution-free runs above this need allow_large
MEMORY_BUDGET_BYTES = int(3.5e9)


class ExperimentError(RuntimeError):
    """Configuration refused before any heavy work (size/memory guards)."""


@dataclass(frozen=True)
class NestingSpec:
    target: str              # "coarse" (inner solve of the coarse problem)
    alpha_inner: float       # or "local" (inner solves of the local problems)
    tol: float = 0.5
    max_iters: int = 200


@dataclass
class ExperimentConfig:
    k: float
    preset: str = "custom"
    mesh_rule: str = "pollution_free"
    mesh_cells: int = None          # explicit rule only
    scenario: str = "constant"
    c_star: float = 1.0
    shifted: bool = False           # square moved north-west by the overlap
    anchor_square: bool = False     # coarse grid forced through the square
    shift_family: str = "additive"  # additive eps = k^beta | multiplicative rho = k^(beta-2)
    eps_prob_beta: float = None     # problem absorption exponent (table2 only)
    precond: str = "HRAS"
    alpha: float = 1.0
    beta: float = 1.0
    nesting: NestingSpec = None
    rhs: str = "plane_wave"
    rel_tol: float = 1e-6
    inner_tol: float = 0.5
    max_iters: int = 200
    threads: int = 1
    allow_large: bool = False


@dataclass
class ResultRow:
    preset: str
    k: float
    n: int
    mesh_rule: str
    precond: str
    alpha: float
    beta: float
    scenario: str
    c_star: float
    outer_iters: int                 # -1 encodes "*"
    inner_iters_avg: float           # None when there is no inner iteration
    converged: bool
    time_total_s: float
    time_per_iter_s: float
    final_relres: float
    error: str = field(default=None, compare=False)  # not serialised


def plane_wave_interpolant(mesh, k):
    """Nodal interpolant of exp(i k x . d) with d = (1, 0)."""
    return np.exp(1j * k * mesh.nodes[:, 0])


def build_rhs(mesh, kind, k, system=None):
    """ones: the all-ones load vector.  plane_wave: f = A u_I so that the
    interpolated plane wave is the exact discrete solution."""
    if kind == "ones":
        return np.ones(mesh.n, dtype=np.complex128)
    if kind == "plane_wave":
        if system is None:
            raise ValueError("plane_wave right-hand side needs the system matrix")
        return system @ plane_wave_interpolant(mesh, k)
    raise ValueError(f"unknown rhs kind {kind!r}")


def _check_budget(cfg, m):
    if cfg.mesh_rule == "pollution_free" and cfg.k > LARGE_K_CAP and not cfg.allow_large:
        raise ExperimentError(
            f"pollution_free at k={cfg.k} exceeds the desk-scale cap "
            f"{LARGE_K_CAP}; pass allow_large to run it")
    n = (m + 1) ** 2
    basis = 2 if (cfg.nesting is not None) else 1
    est = n * (cfg.max_iters + 1) * 16 * basis + n * 9 * 16 * 4
    if est > MEMORY_BUDGET_BYTES and not cfg.allow_large:
        raise ExperimentError(
            f"estimated {est / 1e9:.1f} GB for n={n} exceeds the memory budget")


def _anchored_layout(mesh, k, alpha, anchors):
    """Interface-resolving coarse layout: picks the cell count nearest
    ceil(k^alpha) for which forcing the square's gridlines into the grid still
    leaves enough width for overlapping subdomains."""
    M0 = max(1, round(float(k) ** alpha))
    fallback = None
    for dM in (0, 1, -1, 2, -2, 3, -3):
        M = M0 + dM
        if not 1 <= M <= mesh.m:
            continue
        try:
            layout = layout_from_blocks(mesh, M, anchors_x=anchors, anchors_y=anchors)
        except DegenerateLayoutError:
            continue
        if layout.g_min >= 3:
            return layout
        fallback = fallback or layout
    if fallback is None:
        raise ExperimentError(f"no viable interface-resolving layout near M={M0}")
    return fallback


def _shift_values(cfg):
    """(family, prob_value, prec_value) of the absorption shifts."""
    if cfg.shift_family == "additive":
        prob = 0.0 if cfg.eps_prob_beta is None else float(cfg.k) ** cfg.eps_prob_beta
        return "additive_eps", prob, float(cfg.k) ** cfg.beta
    if cfg.shift_family == "multiplicative":
        return "multiplicative_rho", 0.0, float(cfg.k) ** (cfg.beta - 2.0)
    raise ValueError(f"unknown shift family {cfg.shift_family!r}")


def run_experiment(cfg):
    """Build mesh, decomposition, matrices and preconditioner for one
    configuration, run the Krylov solve, verify the true residual."""
    k = float(cfg.k)
    m = cells_for_rule(k, cfg.mesh_rule, m=cfg.mesh_cells)
    _check_budget(cfg, m)
    mesh = build_fine_mesh(k, "explicit", m=m)

    if cfg.anchor_square:
        ax0, ax1, _, _ = snapped_square_indices(mesh)
        layout = _anchored_layout(mesh, k, cfg.alpha, (ax0, ax1))
    else:
        layout = build_coarse_layout(mesh, k, cfg.alpha)
    decomp = build_decomposition(mesh, layout)

    scenario = cfg.scenario.replace("-", "_")
    if scenario == "constant" or cfg.c_star == 1.0:
        ws = build_wavespeed(mesh, "constant")
        scenario = "constant"
    elif cfg.shifted:
        scenario = "shifted_square"
        ws = build_wavespeed(mesh, scenario, c_star=cfg.c_star,
                             offset=decomp.overlap_layers)
    else:
        scenario = "centered_square"
        ws = build_wavespeed(mesh, scenario, c_star=cfg.c_star)

    family, shift_prob, shift_prec = _shift_values(cfg)
    coeff_prob = AssemblyCoefficients(omega=k, wavespeed=ws, shift_mode=family,
                                      shift_value=shift_prob)
    coeff_prec = AssemblyCoefficients(omega=k, wavespeed=ws, shift_mode=family,
                                      shift_value=shift_prec)
    A_sys = assemble_system(mesh, coeff_prob)
    A_prec = A_sys if shift_prec == shift_prob else assemble_system(mesh, coeff_prec)

    nested_coarse = None
    nested_local = None
    if cfg.nesting is not None:
        if cfg.nesting.target == "coarse":
            nested_coarse, _ = build_nested_coarse_solver(
                mesh, layout, A_prec, coeff_prec, k,
                alpha_inner=cfg.nesting.alpha_inner, inner_tol=cfg.inner_tol,
                inner_max_iters=cfg.nesting.max_iters,
                coarse_interp=decomp.coarse_interp, threads=cfg.threads)
        elif cfg.nesting.target == "local":
            nested_local = dict(k=k, alpha_inner=cfg.nesting.alpha_inner,
                                tol=cfg.inner_tol, max_iters=cfg.nesting.max_iters)
        else:
            raise ValueError(f"unknown nesting target {cfg.nesting.target!r}")

    P = build_preconditioner(cfg.precond, mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff_prec, system_matrix=A_sys,
                             nested_coarse=nested_coarse, nested_local=nested_local,
                             threads=cfg.threads)
    b = build_rhs(mesh, cfg.rhs, k, system=A_sys)

    kcfg = KrylovConfig(variant="fgmres" if P.flexible else "gmres", side="right",
                        rel_tol=cfg.rel_tol, max_iters=cfg.max_iters)
    t0 = time.perf_counter()
    if P.flexible:
        x, rep = fgmres(A_sys, P, b, kcfg)
    else:
        x, rep = gmres(A_sys, P, b, kcfg)
    elapsed = time.perf_counter() - t0

    inner = P.inner_counts()
    inner_avg = float(np.mean(inner)) if inner else None
    notes = []
    if P.inner_failures():
        notes.append(f"inner solves failed to converge {P.inner_failures()} time(s)")
    if rep.converged and rep.true_relres > 2 * cfg.rel_tol:
        notes.append(f"true residual {rep.true_relres:.3e} above 2x rel_tol")
    err = "; ".join(notes) or None
    return ResultRow(
        preset=cfg.preset, k=k, n=mesh.n, mesh_rule=cfg.mesh_rule,
        precond=cfg.precond, alpha=cfg.alpha, beta=cfg.beta,
        scenario=scenario.replace("_", "-"), c_star=cfg.c_star if scenario != "constant" else 1.0,
        outer_iters=rep.iterations if rep.converged else -1,
        inner_iters_avg=inner_avg, converged=rep.converged,
        time_total_s=elapsed,
        time_per_iter_s=elapsed / max(rep.iterations, 1),
        final_relres=rep.true_relres, error=err)


# ---------------------------------------------------------------------------
# presets


def _preset_table1(k):
    out = []
    for alpha in (1.0, 0.6):
        for beta in (1.0, 1.2, 2.0):
            for kind in ("HRAS", "RAS1", "ImpHRAS", "ImpRAS1"):
                out.append(ExperimentConfig(
                    k=k, preset="table1", mesh_rule="pollution_free", precond=kind,
                    alpha=alpha, beta=beta, rhs="plane_wave"))
    return out


def _preset_table2(k):
    return [ExperimentConfig(k=k, preset="table2", mesh_rule="points_per_wavelength",
                             precond=kind, alpha=0.5, beta=1.2, eps_prob_beta=1.2,
                             rhs="plane_wave")
            for kind in ("ImpHRAS", "ImpRAS1")]


def _preset_table3(k):
    return [ExperimentConfig(k=k, preset="table3", mesh_rule="pollution_free",
                             precond="HRAS", alpha=1.0, beta=beta, rhs="plane_wave",
                             nesting=NestingSpec(target="coarse", alpha_inner=0.5))
            for beta in (0.0, 0.4, 0.8, 1.0, 1.2, 1.6, 2.0)]


def _preset_table4(k):
    return [ExperimentConfig(k=k, preset="table4", mesh_rule="points_per_wavelength",
                             precond=kind, alpha=alpha, beta=1.0, rhs="ones")
            for kind in ("ImpRAS1", "ImpHRAS") for alpha in (0.5, 0.4)]


def _preset_table5(k):
    return [ExperimentConfig(k=k, preset="table5_multilevel",
                             mesh_rule="points_per_wavelength", precond="ImpRAS1",
                             alpha=0.4, beta=beta, rhs="ones",
                             nesting=NestingSpec(target="local", alpha_inner=0.8))
            for beta in (1.2, 1.6)]


def _preset_table6(k):
    out = []
    for c_star in (1.5, 1.0, 0.66):
        for shifted in ((False, True) if c_star != 1.0 else (False,)):
            for beta in (1.0, 1.2, 1.6, 1.8):
                out.append(ExperimentConfig(
                    k=k, preset="table6_variable", mesh_rule="pollution_free",
                    scenario="centered-square", c_star=c_star, shifted=shifted,
                    anchor_square=True, shift_family="multiplicative",
                    precond="HRAS", alpha=1.0, beta=beta, rhs="ones",
                    nesting=NestingSpec(target="coarse", alpha_inner=0.5)))
    return out


_PRESET_BUILDERS = {
    "table1": _preset_table1,
    "table2": _preset_table2,
    "table3": _preset_table3,
    "table4": _preset_table4,
    "table5_multilevel": _preset_table5,
    "table6_variable": _preset_table6,
}


def expand_preset(preset, k_values, **overrides):
    if preset not in _PRESET_BUILDERS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cfgs = []
    for k in k_values:
        for cfg in _PRESET_BUILDERS[preset](float(k)):
            for key, val in overrides.items():
                setattr(cfg, key, val)
            cfgs.append(cfg)
    return cfgs


def run_table(preset, k_values, progress=None, **overrides):
    """Run every configuration of a preset; per-row errors are recorded in the
    row and the run continues."""
    rows = []
    for cfg in expand_preset(preset, k_values, **overrides):
        if progress:
            progress(cfg)
        try:
            rows.append(run_experiment(cfg))
        except Exception as exc:  # noqa: BLE001 - per-row error capture
            rows.append(ResultRow(
                preset=cfg.preset, k=cfg.k, n=0, mesh_rule=cfg.mesh_rule,
                precond=cfg.precond, alpha=cfg.alpha, beta=cfg.beta,
                scenario=cfg.scenario, c_star=cfg.c_star, outer_iters=-1,
                inner_iters_avg=None, converged=False, time_total_s=0.0,
                time_per_iter_s=0.0, final_relres=float("nan"),
                error=f"{type(exc).__name__}: {exc}"))
    return rows


# ---------------------------------------------------------------------------
# emission


def _row_values(row):
    vals = []
    for col in RESULT_COLUMNS:
        v = getattr(row, col)
        if col == "inner_iters_avg":
            vals.append("" if v is None else repr(float(v)))
        elif col == "converged":
            vals.append("true" if v else "false")
        elif isinstance(v, float):
            vals.append(repr(v))
        else:
            vals.append(v)
    return vals


def emit_results(rows, target, fmt="csv"):
    """Write rows in the fixed column order; target is a path or file object."""
    if not rows:
        raise ValueError("no rows to emit")
    own = isinstance(target, (str, bytes))
    fobj = open(target, "w", newline="") if own else target
    try:
        if fmt == "csv":
            w = csv.writer(fobj)
            w.writerow(RESULT_COLUMNS)
            for row in rows:
                w.writerow(_row_values(row))
        elif fmt == "json":
            payload = []
            for row in rows:
                d = {c: getattr(row, c) for c in RESULT_COLUMNS}
                if d["final_relres"] != d["final_relres"]:  # NaN
                    d["final_relres"] = None
                payload.append(d)
            json.dump(payload, fobj, indent=1)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    finally:
        if own:
            fobj.close()


def parse_results(source, fmt="csv"):
    """Read back rows emitted by emit_results."""
    own = isinstance(source, (str, bytes))
    fobj = open(source, "r", newline="") if own else source
    try:
        rows = []
        if fmt == "csv":
            reader = csv.DictReader(fobj)
            for rec in reader:
                rows.append(_rec_to_row(rec))
        elif fmt == "json":
            for rec in json.load(fobj):
                rows.append(_rec_to_row(rec))
        else:
            raise ValueError(f"unknown format {fmt!r}")
        return rows
    finally:
        if own:
            fobj.close()


def _rec_to_row(rec):
    def fl(x, default=float("nan")):
        if x is None or x == "":
            return default
        return float(x)

    conv = rec["converged"]
    conv = conv if isinstance(conv, bool) else conv.lower() == "true"
    inner = rec["inner_iters_avg"]
    inner = None if inner in (None, "") else float(inner)
    return ResultRow(preset=rec["preset"], k=float(rec["k"]), n=int(rec["n"]),
                     mesh_rule=rec["mesh_rule"], precond=rec["precond"],
                     alpha=float(rec["alpha"]), beta=float(rec["beta"]),
                     scenario=rec["scenario"], c_star=float(rec["c_star"]),
                     outer_iters=int(rec["outer_iters"]), inner_iters_avg=inner,
                     converged=conv, time_total_s=fl(rec["time_total_s"]),
                     time_per_iter_s=fl(rec["time_per_iter_s"]),
                     final_relres=fl(rec["final_relres"]))
