"""Coarsening rule, space-time hierarchy planning and the V-cycle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import Coefficient, MaterialField, SpatialOperators, _expand, assemble_operators, build_transfers
from .linalg import SolverOptions
from .mesh import MeshHierarchy, TetMesh, longest_edge
from .parallel import SERIAL, SlabPool
from .spacetime import (
    Level, SmootherSpec, _spatial, apply_L, build_level, forward_solve, hybrid_smooth,
)

DEFAULT_LAMBDA_CRIT = 0.1


@dataclass(frozen=True)
class CoarseningRule:
    """Local degree of anisotropy ``beta tau / (alpha h_T^2)`` against a threshold.

    For the eddy-current problem ``alpha`` is the conductivity and ``beta``
    the reluctivity.
    """

    alpha: Coefficient = 1.0
    beta: Coefficient = 1.0
    lambda_crit: float = DEFAULT_LAMBDA_CRIT

    def __post_init__(self):
        if not self.lambda_crit > 0:
            raise ValueError("lambda_crit must be positive")

    @classmethod
    def from_materials(cls, materials: MaterialField, lambda_crit: float = DEFAULT_LAMBDA_CRIT):
        return cls(materials.sigma, materials.mu_inv, lambda_crit)

    def ratio(self, mesh: TetMesh) -> np.ndarray:
        """``beta / (alpha h_T^2)`` per tet, so that lambda = tau * ratio."""
        alpha = _expand(self.alpha, mesh.material, "alpha")
        beta = _expand(self.beta, mesh.material, "beta")
        return beta / (alpha * mesh.longest_edges() ** 2)

    def min_lambda(self, tau: float, mesh: TetMesh) -> float:
        return float(tau * self.ratio(mesh).min())

    def tau_for(self, lam: float, mesh: TetMesh) -> float:
        """Step size at which the smallest local lambda equals ``lam``."""
        return lam / float(self.ratio(mesh).min())

    def permits(self, tau: float, mesh: TetMesh) -> bool:
        return self.min_lambda(tau, mesh) >= self.lambda_crit


def lambda_of_element(rule: CoarseningRule, tau: float, mesh: TetMesh, tet: int) -> float:
    h = longest_edge(mesh, tet)
    label = np.array([mesh.material[tet]])
    alpha = _expand(rule.alpha, label, "alpha")[0]
    beta = _expand(rule.beta, label, "beta")[0]
    return beta * tau / (alpha * h * h)


@dataclass(frozen=True)
class PlanLevel:
    m: int
    tau: float
    spatial_level: int


@dataclass(frozen=True)
class CoarseningPlan:
    """Levels ordered fine to coarse; ``coarsen_space[i]`` covers level i -> i+1."""

    levels: tuple[PlanLevel, ...]
    mode: str
    coarsen_space: tuple[bool, ...] = field(init=False)

    def __post_init__(self):
        flags = tuple(
            a.spatial_level != b.spatial_level for a, b in zip(self.levels, self.levels[1:])
        )
        object.__setattr__(self, "coarsen_space", flags)

    def __len__(self):
        return len(self.levels)

    def table(self) -> str:
        """Text table: time levels as columns (finest left), space levels as rows."""
        nt = len(self.levels)
        time_ids = list(range(nt - 1, -1, -1))
        spaces = sorted({lv.spatial_level for lv in self.levels} | {0}, reverse=True)
        top = max(spaces)
        header = ["Space/Time"] + [str(t) for t in time_ids]
        rows = [header]
        for s in range(top, -1, -1):
            rows.append([str(s)] + ["x" if lv.spatial_level == s else "" for lv in self.levels])
        width = max(len(c) for r in rows for c in r[1:]) or 1
        first = max(len(r[0]) for r in rows)
        return "\n".join(
            " | ".join([r[0].ljust(first)] + [c.center(width) for c in r[1:]]) for r in rows
        )


PLAN_MODES = ("semi_time", "full", "auto")


def plan_hierarchy(rule: CoarseningRule, m: int, tau: float, hierarchy: MeshHierarchy,
                   mode: str = "auto", coarsest_m: int = 1) -> CoarseningPlan:
    if len(hierarchy) == 0:
        raise ValueError("empty mesh hierarchy")
    if mode not in PLAN_MODES:
        raise ValueError(f"unknown coarsening mode {mode!r}")
    if coarsest_m < 1 or m < coarsest_m or m % coarsest_m:
        raise ValueError("m must be a power-of-two multiple of coarsest_m")
    ratio = m // coarsest_m
    if ratio & (ratio - 1):
        raise ValueError("m must be a power-of-two multiple of coarsest_m")

    s = len(hierarchy) - 1
    levels = [PlanLevel(m, tau, s)]
    while m > coarsest_m:
        if s > 0:
            if mode == "full" and len(levels) == 1:
                s -= 1
            elif mode == "auto" and rule.permits(tau, hierarchy[s]):
                s -= 1
        m, tau = m // 2, 2 * tau
        levels.append(PlanLevel(m, tau, s))
    return CoarseningPlan(tuple(levels), mode)


def time_transfers(fine: Level | int, coarse: Level | int, restriction: str = "sum"):
    """Time prolongation (duplicate each coarse block) and its restriction.

    Returned as sparse (m_f, m_c) and (m_c, m_f) matrices acting on the time
    index of an (m, n) array. ``restriction="sum"`` is the transpose of the
    prolongation; ``"average"`` scales it by 1/2.
    """
    mf = fine if isinstance(fine, int) else fine.m
    mc = coarse if isinstance(coarse, int) else coarse.m
    if 2 * mc != mf:
        raise ValueError(f"coarse level must have half the steps: {mf} -> {mc}")
    P = sp.csr_matrix((np.ones(mf), (np.arange(mf), np.arange(mf) // 2)), shape=(mf, mc))
    if restriction == "sum":
        R = P.T.tocsr()
    elif restriction == "average":
        R = 0.5 * P.T.tocsr()
    else:
        raise ValueError(f"unknown restriction {restriction!r}")
    return R, P


def coarsest_solve(level: Level, F: np.ndarray) -> np.ndarray:
    return forward_solve(level, F)


class SpaceTimeMultigrid:
    """V-cycle solver over a coarsening plan.

    Coarse levels are rediscretized with the doubled step size on their own
    mesh; with nested Nedelec spaces this coincides with the Galerkin product.
    """

    def __init__(self, plan: CoarseningPlan, hierarchy: MeshHierarchy,
                 materials: MaterialField | None = None, bc: str = "neumann",
                 spec: SmootherSpec | None = None, solver: SolverOptions | None = None,
                 restriction: str = "sum", pool: SlabPool = SERIAL):
        self.plan = plan
        self.spec = spec or SmootherSpec()
        self.pool = pool
        self.restriction = restriction
        materials = materials or MaterialField()
        ops: dict[int, SpatialOperators] = {}
        for lv in plan.levels:
            if lv.spatial_level not in ops:
                ops[lv.spatial_level] = assemble_operators(hierarchy[lv.spatial_level], materials, bc)
        self.levels = [build_level(ops[lv.spatial_level], lv.tau, lv.m, solver, lv.spatial_level)
                       for lv in plan.levels]
        self.space_P = []
        self.time_RP = []
        for fine, coarse in zip(self.levels, self.levels[1:]):
            if fine.spatial_level == coarse.spatial_level:
                self.space_P.append(None)
            elif fine.spatial_level == coarse.spatial_level + 1:
                P_edge, _ = build_transfers(hierarchy.refinements[coarse.spatial_level], bc)
                self.space_P.append(P_edge)
            else:
                raise ValueError("plan skips a spatial level")
            self.time_RP.append(time_transfers(fine, coarse, restriction))

    @property
    def finest(self) -> Level:
        return self.levels[0]

    def restrict(self, i: int, R: np.ndarray) -> np.ndarray:
        Rt, _ = self.time_RP[i]
        Rc = Rt @ R
        P = self.space_P[i]
        return Rc if P is None else _spatial(P.T, Rc)

    def prolongate(self, i: int, E: np.ndarray) -> np.ndarray:
        _, Pt = self.time_RP[i]
        P = self.space_P[i]
        if P is not None:
            E = _spatial(P, E)
        return Pt @ E

    def v_cycle(self, X: np.ndarray, F: np.ndarray, i: int = 0) -> np.ndarray:
        level = self.levels[i]
        if i == len(self.levels) - 1:
            return coarsest_solve(level, F)
        X = hybrid_smooth(level, X, F, self.spec, "pre", self.pool)
        R = F - apply_L(level, X, self.pool)
        Rc = self.restrict(i, R)
        coarse = self.levels[i + 1]
        Ec = self.v_cycle(np.zeros((coarse.m, coarse.n)), Rc, i + 1)
        X = X + self.prolongate(i, Ec)
        return hybrid_smooth(level, X, F, self.spec, "post", self.pool)

    def residual_norm(self, X, F) -> float:
        return float(np.linalg.norm(F - apply_L(self.finest, X, self.pool)))

    def solve(self, F: np.ndarray, X0: np.ndarray | None = None, tol: float = 1e-10,
              maxiter: int = 200) -> tuple[np.ndarray, int, list[float]]:
        """V-cycles until the residual norm drops by ``tol``; returns (x, iterations, history)."""
        X = self.finest.zeros() if X0 is None else np.array(X0, dtype=float)
        r0 = self.residual_norm(X, F)
        history = [r0]
        it = 0
        while it < maxiter and history[-1] > tol * r0:
            X = self.v_cycle(X, F)
            it += 1
            history.append(self.residual_norm(X, F))
        return X, it, history
