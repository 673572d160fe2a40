"""Convergence-rate, lambda_crit, two-material and weak-scaling experiments."""
from __future__ import annotations

import ast
import csv
import dataclasses
import io
import statistics
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .fem import MaterialField, SpatialOperators, load_vector
from .linalg import SolverOptions
from .mesh import MeshHierarchy, build_base_mesh, build_hierarchy
from .multigrid import CoarseningRule, SpaceTimeMultigrid, plan_hierarchy
from .parallel import SlabPool
from .spacetime import SmootherSpec, assemble_rhs


@dataclass(frozen=True)
class ExperimentConfig:
    mesh: str = "two_tets"
    refinements: int = 2
    materials: tuple | None = None  # label per base tet; None labels all tets 0
    sigma: float | dict = 1.0
    mu_inv: float | dict = 1.0
    bc: str = "neumann"
    m: int = 64
    tau: float | None = None
    lam: float = 1.0  # target min lambda, used when tau is None
    smoother: str = "SAS"
    omega: float = 0.5
    mode: str = "semi_time"
    lambda_crit: float = 0.1
    solver: str = "direct"
    cg_iterations: int | None = None
    workers: int = 1
    max_iterations: int = 200
    underflow: float = 1e-100
    seed: int = 0
    coarsest_m: int = 1
    restriction: str = "sum"

    def __post_init__(self):
        for name in ("refinements", "m", "workers", "max_iterations", "coarsest_m"):
            if getattr(self, name) < (0 if name == "refinements" else 1):
                raise ValueError(f"{name} must be positive")
        if self.underflow <= 0:
            raise ValueError("underflow must be positive")

    @property
    def material_field(self) -> MaterialField:
        return MaterialField(self.sigma, self.mu_inv)

    @property
    def rule(self) -> CoarseningRule:
        return CoarseningRule(self.sigma, self.mu_inv, self.lambda_crit)

    @property
    def solver_options(self) -> SolverOptions:
        if self.solver == "cg":
            return SolverOptions("cg", fixed_iterations=self.cg_iterations)
        return SolverOptions(self.solver)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise KeyError(f"unknown config key {name!r}")
    if isinstance(value, str):
        try:
            value = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            pass
    if name == "materials" and value is not None:
        value = tuple(value)
    return value


def load_config(path, base: ExperimentConfig | None = None, **overrides) -> ExperimentConfig:
    """Read a line-oriented ``key = value`` file; ``#`` starts a comment."""
    values = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = _coerce(key, val)
    values.update({k: _coerce(k, v) for k, v in overrides.items() if v is not None})
    return replace(base or ExperimentConfig(), **values)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)!r}\n" for f in fields(cfg))


def build_mesh_hierarchy(cfg: ExperimentConfig) -> MeshHierarchy:
    return build_hierarchy(build_base_mesh(cfg.mesh, cfg.materials), cfg.refinements)


def resolve_tau(cfg: ExperimentConfig, hierarchy: MeshHierarchy) -> float:
    if cfg.tau is not None:
        return cfg.tau
    return cfg.rule.tau_for(cfg.lam, hierarchy.finest)


def build_multigrid(cfg: ExperimentConfig, hierarchy: MeshHierarchy | None = None,
                    pool: SlabPool | None = None) -> SpaceTimeMultigrid:
    hierarchy = hierarchy or build_mesh_hierarchy(cfg)
    tau = resolve_tau(cfg, hierarchy)
    plan = plan_hierarchy(cfg.rule, cfg.m, tau, hierarchy, cfg.mode, cfg.coarsest_m)
    return SpaceTimeMultigrid(
        plan, hierarchy, cfg.material_field, cfg.bc,
        SmootherSpec(cfg.smoother, cfg.omega), cfg.solver_options, cfg.restriction,
        pool or SlabPool(cfg.workers),
    )


@dataclass
class RateReport:
    factors: list[float]
    rate: float
    total_reduction: float
    iterations: int
    seconds: float
    diverged: bool = False
    seed: int | None = None


def power_iteration(step: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                    max_iterations: int = 200, underflow: float = 1e-100,
                    divergence_window: int = 10, seed: int | None = None) -> RateReport:
    """Iterate ``x <- step(x)`` recording the l2 reduction factor per step.

    Stops at ``max_iterations``, when the total reduction falls below
    ``underflow``, or after ``divergence_window`` consecutive factors > 1.
    The reported rate is the largest factor seen.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    n0 = nrm = float(np.linalg.norm(x))
    if n0 == 0.0:
        raise ValueError("initial vector must be nonzero")
    factors: list[float] = []
    growing = 0
    diverged = False
    while len(factors) < max_iterations:
        x = step(x)
        new = float(np.linalg.norm(x))
        factors.append(new / nrm)
        nrm = new
        growing = growing + 1 if factors[-1] > 1.0 else 0
        if growing >= divergence_window:
            diverged = True
            break
        if nrm / n0 < underflow or nrm == 0.0:
            break
    return RateReport(factors, max(factors), nrm / n0, len(factors),
                      time.perf_counter() - t0, diverged, seed)


def random_guess(cfg: ExperimentConfig, shape) -> np.ndarray:
    return np.random.default_rng(cfg.seed).random(shape)


def power_iteration_rate(cfg: ExperimentConfig, hierarchy: MeshHierarchy | None = None) -> RateReport:
    mg = build_multigrid(cfg, hierarchy)
    try:
        lvl = mg.finest
        F = np.zeros((lvl.m, lvl.n))
        return power_iteration(lambda x: mg.v_cycle(x, F), random_guess(cfg, F.shape),
                               cfg.max_iterations, cfg.underflow, seed=cfg.seed)
    finally:
        mg.pool.close()


# ---------------------------------------------------------------- CSV helpers

SWEEP_COLUMNS = ["lambda", "mode", "tau", "rate", "iterations", "total_reduction", "diverged", "seed"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_csv(rows: Sequence[dict], columns: Sequence[str], path) -> None:
    Path(path).write_text(rows_to_csv(rows, columns))


def read_csv(path_or_text) -> list[dict]:
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({k: _parse(v) for k, v in r.items()})
    return rows


def _parse(v: str):
    try:
        return ast.literal_eval(v)
    except (ValueError, SyntaxError):
        return v


# ------------------------------------------------------------- lambda sweeps

def lambda_sweep(cfg: ExperimentConfig, lams: Iterable[float],
                 modes: Sequence[str] = ("semi_time", "full"), progress=None) -> list[dict]:
    """Rates over a lambda grid, realized by varying tau on a fixed mesh."""
    lams = list(lams)
    if any(l <= 0 for l in lams):
        raise ValueError("lambda values must be positive")
    hierarchy = build_mesh_hierarchy(cfg) if lams else None
    rows = []
    for lam in lams:
        for mode in modes:
            run = replace(cfg, lam=float(lam), tau=None, mode=mode)
            rep = power_iteration_rate(run, hierarchy)
            rows.append({
                "lambda": float(lam), "mode": mode, "tau": resolve_tau(run, hierarchy),
                "rate": rep.rate, "iterations": rep.iterations,
                "total_reduction": rep.total_reduction, "diverged": rep.diverged,
                "seed": cfg.seed,
            })
            if progress:
                progress(rows[-1])
    return rows


@dataclass(frozen=True)
class LambdaCritEstimate:
    value: float | None
    bracket: tuple[float | None, float | None]
    crossover: bool

    def __str__(self):
        if not self.crossover:
            return "no crossover"
        lo, hi = self.bracket
        return f"lambda_crit ~ {self.value:g} (curves split between {lo} and {hi})"


def estimate_lambda_crit(rows, gap_tol: float = 0.02, modes=("full", "semi_time")) -> LambdaCritEstimate:
    """Smallest lambda, scanning down from the largest, where both modes still agree.

    ``rows`` is a sweep (list of dicts) or CSV text/path with both modes present.
    """
    if not isinstance(rows, list):
        rows = read_csv(rows)
    table: dict[float, dict[str, float]] = {}
    for r in rows:
        table.setdefault(float(r["lambda"]), {})[r["mode"]] = float(r["rate"])
    present = {m for v in table.values() for m in v}
    if not set(modes) <= present:
        raise ValueError(f"sweep must contain both modes {modes}, found {sorted(present)}")
    lams = sorted((l for l, v in table.items() if set(modes) <= set(v)), reverse=True)
    agree = None
    for lam in lams:
        a, b = (table[lam][m] for m in modes)
        if abs(a - b) <= gap_tol:
            agree = lam
            continue
        if agree is None:
            return LambdaCritEstimate(None, (None, None), False)
        return LambdaCritEstimate(agree, (lam, agree), True)
    if agree is None:
        return LambdaCritEstimate(None, (None, None), False)
    return LambdaCritEstimate(agree, (None, agree), True)


# ------------------------------------------------------------ two materials

TWO_LAMBDA_COLUMNS = ["mu_inv_2", "lambda", "tau", "rate", "iterations", "seed"]


def two_lambda_study(cfg: ExperimentConfig, mu2_values: Iterable[float], lams: Iterable[float],
                     progress=None) -> list[dict]:
    """Full-coarsening rates with reluctivity ``mu2`` on the second base tet.

    Only the first material's lambda is controlled (it is the minimum).
    """
    base = replace(cfg, mesh="two_tets", materials=(1, 2), mode="full")
    lams = list(lams)
    rows = []
    for mu2 in mu2_values:
        if mu2 < 1:
            raise ValueError("mu_inv_2 must be >= 1 so that material 1 holds the minimum lambda")
        sigma = base.sigma if isinstance(base.sigma, dict) else {1: base.sigma, 2: base.sigma}
        run = replace(base, sigma=sigma, mu_inv={1: 1.0, 2: float(mu2)})
        hierarchy = build_mesh_hierarchy(run)
        for lam in lams:
            r = replace(run, lam=float(lam), tau=None)
            rep = power_iteration_rate(r, hierarchy)
            rows.append({"mu_inv_2": float(mu2), "lambda": float(lam),
                         "tau": resolve_tau(r, hierarchy), "rate": rep.rate,
                         "iterations": rep.iterations, "seed": cfg.seed})
            if progress:
                progress(rows[-1])
    return rows


def rate_table(rows: list[dict]) -> str:
    """Text table of a two-lambda study: mu_inv_2 rows, lambda columns."""
    mus = list(dict.fromkeys(r["mu_inv_2"] for r in rows))
    lams = list(dict.fromkeys(r["lambda"] for r in rows))
    rate = {(r["mu_inv_2"], r["lambda"]): r["rate"] for r in rows}
    out = ["mu_inv_2 \\ lambda " + " ".join(f"{l:>8g}" for l in lams)]
    for mu in mus:
        out.append(f"{mu:<18g} " + " ".join(f"{rate[mu, l]:>8.3f}" for l in lams))
    return "\n".join(out)


# -------------------------------------------------------------- weak scaling

def rotating_source(ops: SpatialOperators) -> Callable[[float], np.ndarray]:
    """Load of a field with both curl-free and solenoidal parts, growing in time."""
    def field_(x):
        return np.stack([-(x[:, 1] - 0.5), x[:, 0] - 0.5, x[:, 2] * (1.0 - x[:, 2])], axis=1)

    f = load_vector(ops, field_)
    return lambda t: (1.0 + t) * f


def solve_problem(cfg: ExperimentConfig, tol: float = 1e-10, hierarchy=None, pool=None):
    """Solve the rotating-source problem from a zero guess; returns (x, iterations, history)."""
    mg = build_multigrid(cfg, hierarchy, pool)
    F = assemble_rhs(mg.finest, rotating_source(mg.finest.ops))
    try:
        return mg.solve(F, tol=tol, maxiter=cfg.max_iterations)
    finally:
        if pool is None:
            mg.pool.close()


WEAK_COLUMNS = ["k", "workers", "m", "mode", "iterations", "final_reduction", "solution_norm", "seed"]
TIMING_COLUMNS = ["k", "workers", "m", "seconds_full", "seconds_semi_time",
                  "iterations_full", "iterations_semi_time", "adjusted_ratio"]


def weak_scaling(cfg: ExperimentConfig, ks: Iterable[int], tol: float = 1e-10,
                 repeats: int = 3, progress=None) -> tuple[list[dict], list[dict]]:
    """Time steps ``cfg.m * 2^k`` on ``2^k`` workers, coarsening rule vs time-only.

    Returns (deterministic rows, timing rows). Timing is the median of
    ``repeats`` runs after one discarded warm-up run.
    """
    hierarchy = build_mesh_hierarchy(cfg)
    rows, timing = [], []
    for k in ks:
        workers = 2 ** k
        m = cfg.m * workers
        per_mode = {}
        with SlabPool(workers) as pool:
            for label, mode in (("full", "auto"), ("semi_time", "semi_time")):
                run = replace(cfg, m=m, workers=workers, mode=mode)
                mg = build_multigrid(run, hierarchy, pool)
                F = assemble_rhs(mg.finest, rotating_source(mg.finest.ops))
                seconds = []
                for rep in range(repeats + 1):
                    t0 = time.perf_counter()
                    X, it, hist = mg.solve(F, tol=tol, maxiter=cfg.max_iterations)
                    if rep:
                        seconds.append(time.perf_counter() - t0)
                per_mode[label] = (statistics.median(seconds), it)
                rows.append({"k": k, "workers": workers, "m": m, "mode": label, "iterations": it,
                             "final_reduction": hist[-1] / hist[0] if hist[0] else 0.0,
                             "solution_norm": float(np.linalg.norm(X)), "seed": cfg.seed})
                if progress:
                    progress(rows[-1])
        (tf, itf), (ts, its) = per_mode["full"], per_mode["semi_time"]
        timing.append({"k": k, "workers": workers, "m": m, "seconds_full": tf,
                       "seconds_semi_time": ts, "iterations_full": itf,
                       "iterations_semi_time": its, "adjusted_ratio": tf / ts * its / itf})
    return rows, timing


# ------------------------------------------------------------------- plots

def plot_sweep(rows: list[dict], path, title: str | None = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in dict.fromkeys(r["mode"] for r in rows):
        pts = sorted((r["lambda"], r["rate"]) for r in rows if r["mode"] == mode)
        ax.semilogx(*zip(*pts), marker="o", label=mode)
    ax.set_xlabel("lambda")
    ax.set_ylabel("convergence rate")
    ax.set_ylim(0, 1)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
