"""The implicit-Euler space-time system and its smoothers.

A space-time vector is an array of shape (m, n): row k holds the spatial
degrees of freedom of time step k + 1. The block operator is lower
bidiagonal with ``A_tau = M + tau K`` on the diagonal and ``-M`` below it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import SpatialOperators
from .linalg import SolverOptions, SpatialSolver
from .parallel import SERIAL, SlabPool, prefix_sum

__all__ = [
    "Level", "SmootherSpec", "build_level", "apply_L", "residual", "assemble_rhs",
    "smoother_S", "prefix_sum_time", "correction_A", "hybrid_smooth", "forward_solve",
]


@dataclass(eq=False)
class Level:
    tau: float
    m: int
    ops: SpatialOperators
    A_tau: sp.csr_matrix
    solver_A: SpatialSolver
    solver_Kn: SpatialSolver
    spatial_level: int = 0

    @property
    def n(self) -> int:
        return self.ops.n

    @property
    def M(self):
        return self.ops.M

    @property
    def G(self):
        return self.ops.G

    def zeros(self) -> np.ndarray:
        return np.zeros((self.m, self.n))


def build_level(ops: SpatialOperators, tau: float, m: int,
                solver: SolverOptions | None = None, spatial_level: int = 0) -> Level:
    if tau <= 0 or m < 1:
        raise ValueError("need tau > 0 and m >= 1")
    A_tau = (ops.M + tau * ops.K).tocsr()
    A_tau.sort_indices()
    kernel = "constants" if ops.bc == "neumann" else None
    return Level(
        tau=tau, m=m, ops=ops, A_tau=A_tau,
        solver_A=SpatialSolver(A_tau, solver),
        solver_Kn=SpatialSolver(ops.Kn, solver, kernel=kernel),
        spatial_level=spatial_level,
    )


@dataclass(frozen=True)
class SmootherSpec:
    """Hybrid smoother word over {S, A}, applied right to left.

    The post-smoother uses the reversed word.
    """

    sequence: str = "SAS"
    omega: float = 0.5

    def __post_init__(self):
        if not self.sequence:
            raise ValueError("smoother sequence must be nonempty")
        bad = set(self.sequence) - {"S", "A"}
        if bad:
            raise ValueError(f"invalid smoother characters {sorted(bad)}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")

    def steps(self, phase: str) -> str:
        """Characters in application order for ``phase`` ('pre' or 'post')."""
        if phase == "pre":
            return self.sequence[::-1]
        if phase == "post":
            return self.sequence
        raise ValueError(f"unknown phase {phase!r}")


def _spatial(A, X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray((A @ X.T).T)


def _check(level: Level, X: np.ndarray, name: str = "x") -> None:
    if X.shape != (level.m, level.n):
        raise ValueError(f"{name} has shape {X.shape}, level expects {(level.m, level.n)}")


def apply_L(level: Level, X: np.ndarray, pool: SlabPool = SERIAL) -> np.ndarray:
    _check(level, X)
    Y = np.empty_like(X)

    def work(a, b):
        Y[a:b] = _spatial(level.A_tau, X[a:b])
        # the one exchange: last block of the left neighbour
        lo = max(a, 1)
        if lo < b:
            Y[lo:b] -= _spatial(level.M, X[lo - 1:b - 1])

    pool.map(work, level.m)
    return Y


def residual(level: Level, X: np.ndarray, F: np.ndarray, pool: SlabPool = SERIAL) -> np.ndarray:
    _check(level, F, "f")
    return F - apply_L(level, X, pool)


def assemble_rhs(level: Level, source: Callable[[float], np.ndarray] | None = None,
                 u0: np.ndarray | None = None) -> np.ndarray:
    """Right-hand side blocks ``tau * f(t_k)`` with ``t_k = k tau``, plus ``M u0`` in block 1.

    ``source(t)`` returns the edge load vector (length n) at time t.
    """
    F = level.zeros()
    if source is not None:
        for k in range(level.m):
            fk = np.asarray(source((k + 1) * level.tau), dtype=float)
            if fk.shape != (level.n,):
                raise ValueError(f"source returned shape {fk.shape}, expected {(level.n,)}")
            F[k] = level.tau * fk
    if u0 is not None:
        u0 = np.asarray(u0, dtype=float)
        if u0.shape != (level.n,):
            raise ValueError(f"u0 has shape {u0.shape}, expected {(level.n,)}")
        F[0] += level.M @ u0
    return F


def _block_solve(solver: SpatialSolver, R: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(solver.solve(np.ascontiguousarray(R.T)).T)


def smoother_S(level: Level, X: np.ndarray, F: np.ndarray, nu: int = 1, omega: float = 0.5,
               pool: SlabPool = SERIAL) -> np.ndarray:
    """``nu`` damped block-Jacobi steps ``x += omega * diag(A_tau)^{-1} (f - L x)``."""
    X = X.copy()
    for _ in range(nu):
        R = residual(level, X, F, pool)

        def work(a, b):
            X[a:b] += omega * _block_solve(level.solver_A, R[a:b])

        pool.map(work, level.m)
    return X


def prefix_sum_time(X: np.ndarray, pool: SlabPool = SERIAL) -> np.ndarray:
    return prefix_sum(X, pool)


def correction_A(level: Level, X: np.ndarray, F: np.ndarray, pool: SlabPool = SERIAL) -> np.ndarray:
    """Nodal auxiliary correction ``x += G Sigma_t Kn^{-1} G^T (f - L x)``."""
    R = residual(level, X, F, pool)
    Z = np.empty((level.m, level.ops.n_nodes))

    def nodal(a, b):
        Z[a:b] = _block_solve(level.solver_Kn, _spatial(level.G.T, R[a:b]))

    pool.map(nodal, level.m)
    S = prefix_sum(Z, pool)
    X = X.copy()

    def lift(a, b):
        X[a:b] += _spatial(level.G, S[a:b])

    pool.map(lift, level.m)
    return X


def hybrid_smooth(level: Level, X: np.ndarray, F: np.ndarray, spec: SmootherSpec,
                  phase: str = "pre", pool: SlabPool = SERIAL) -> np.ndarray:
    for c in spec.steps(phase):
        if c == "S":
            X = smoother_S(level, X, F, 1, spec.omega, pool)
        else:
            X = correction_A(level, X, F, pool)
    return X


def forward_solve(level: Level, F: np.ndarray) -> np.ndarray:
    """Exact solve of ``L x = f`` by time stepping (sequential in time)."""
    _check(level, F, "f")
    X = np.empty_like(F)
    prev = np.zeros(level.n)
    for k in range(level.m):
        prev = level.solver_A.solve(F[k] + level.M @ prev)
        X[k] = prev
    return X
