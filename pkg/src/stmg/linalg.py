"""Sparse products, a direct SPD solver and a (block) preconditioned CG.

Matrices are ``scipy.sparse.csr_matrix``; right-hand sides may be vectors
of shape (n,) or blocks of shape (n, k) whose columns are independent systems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def spmv(A, x: np.ndarray) -> np.ndarray:
    _check(A.shape[1] == x.shape[0], f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def spmm(A, B) -> sp.csr_matrix:
    _check(A.shape[1] == B.shape[0], f"dimension mismatch: {A.shape} @ {B.shape}")
    C = sp.csr_matrix(A @ B)
    C.sort_indices()
    return C


def transpose(A) -> sp.csr_matrix:
    C = sp.csr_matrix(A.T)
    C.sort_indices()
    return C


def is_symmetric(A, rtol: float = 0.0) -> bool:
    if A.shape[0] != A.shape[1]:
        return False
    diff = abs(A - A.T)
    if diff.nnz == 0:
        return True
    return diff.max() <= rtol * abs(A).max()


@dataclass(frozen=True)
class SolverOptions:
    """How spatial systems are solved.

    ``mode="direct"`` factorizes once; ``mode="cg"`` runs Jacobi-preconditioned
    CG, either to ``tol`` or, when ``fixed_iterations`` is set, for exactly
    that many steps whether or not it has converged.
    """

    mode: str = "direct"
    tol: float = 1e-12
    maxiter: int = 10_000
    fixed_iterations: int | None = None

    def __post_init__(self):
        if self.mode not in ("direct", "cg"):
            raise ValueError(f"unknown solver mode {self.mode!r}")


class SpatialSolver:
    """Reusable solver for one symmetric positive (semi)definite matrix.

    ``kernel="constants"`` declares that the constant vector spans the null
    space (pure Neumann Laplacian): right-hand sides and solutions are then
    projected to zero mean.
    """

    def __init__(self, A, options: SolverOptions | None = None, kernel: str | None = None):
        self.A = sp.csr_matrix(A)
        self.options = options or SolverOptions()
        self.kernel = kernel
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("matrix must be square")
        if not is_symmetric(self.A, 1e-14):
            raise NotPositiveDefiniteError("matrix is not symmetric")
        self.n = n
        self._lu = None
        if self.options.mode == "direct" and n > 0:
            B = self.A[1:, 1:] if kernel == "constants" else self.A
            self._lu = _spd_factor(B) if B.shape[0] else None
        else:
            d = self.A.diagonal()
            if np.any(d <= 0):
                raise NotPositiveDefiniteError("nonpositive diagonal entry")
            self._dinv = 1.0 / d

    def _project(self, v: np.ndarray) -> np.ndarray:
        if self.kernel == "constants":
            return v - v.mean(axis=0)
        return v

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        _check(b.shape[0] == self.n, f"rhs has {b.shape[0]} rows, expected {self.n}")
        if self.n == 0:
            return np.zeros_like(b)
        b = self._project(b)
        if self.options.mode == "direct":
            if self.kernel == "constants":
                x = np.zeros_like(b)
                if self._lu is not None:
                    x[1:] = self._lu.solve(np.ascontiguousarray(b[1:]))
            else:
                x = self._lu.solve(b)
        else:
            x, _ = cg(self.A, b, self._dinv, tol=self.options.tol,
                      maxiter=self.options.maxiter,
                      fixed_iterations=self.options.fixed_iterations,
                      project=self._project)
        return self._project(x)


def _spd_factor(A):
    # symmetric ordering with no pivoting: all pivots > 0 iff A is SPD
    lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    piv = lu.U.diagonal()
    if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
        raise NotPositiveDefiniteError("direct factorization found a nonpositive pivot")
    return lu


def cg(A, b: np.ndarray, dinv: np.ndarray | None = None, x0: np.ndarray | None = None,
       tol: float = 1e-12, maxiter: int = 10_000, fixed_iterations: int | None = None,
       project=None, history: list | None = None):
    """Jacobi-preconditioned conjugate gradients, column-wise on blocks.

    Returns ``(x, iterations)``. With ``fixed_iterations`` exactly that many
    steps are taken (columns whose residual is already zero are frozen).
    Residual norms per iteration are appended to ``history`` if given.
    """
    project = project or (lambda v: v)
    vec = b.ndim == 1
    B = b.reshape(len(b), -1)
    dinv = np.ones(len(b)) if dinv is None else dinv
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(B.shape)
    R = project(B - A @ X)
    Z = dinv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    steps = fixed_iterations if fixed_iterations is not None else maxiter
    it = 0
    if history is not None:
        history.append(np.linalg.norm(R, axis=0))
    for it in range(1, steps + 1):
        active = rz != 0
        if fixed_iterations is None:
            active &= np.linalg.norm(R, axis=0) > tol * bnorm
        if not active.any():
            it -= 1
            break
        AP = project(A @ P)
        pAp = np.einsum("ij,ij->j", P, AP)
        if np.any(pAp[active] <= 0):
            raise NotPositiveDefiniteError("CG breakdown: matrix is not positive definite")
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        Z = dinv[:, None] * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = np.where(active, rz_new, rz)
        if history is not None:
            history.append(np.linalg.norm(R, axis=0))
    return (X.ravel() if vec else X), it
