"""Two-grid analysis of the scalar test equation u' + lam u = f.

Diagonalizing the semi-discrete system by the eigenvectors of M^{-1} K turns
every spatial mode into one scalar test equation, with the generalized
eigenvalue in place of ``lam``. The iteration matrices below are the exact
error propagators of the space-time method restricted to one such mode.
Modes with ``lam > 0`` are M-orthogonal to discrete gradients, so the
auxiliary correction leaves them untouched; for ``lam == 0`` it is an exact
time integration.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .spacetime import SmootherSpec

MAX_DENSE_M = 2048


@dataclass(frozen=True)
class TestEquationConfig:
    lam: float = 0.0
    m: int = 64
    tau: float = 1.0
    omega: float = 0.5
    sequence: str = "SAS"
    coarsening: str = "semi_time"  # or "none": smoother only

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.coarsening not in ("semi_time", "none"):
            raise ValueError(f"unknown coarsening {self.coarsening!r}")
        SmootherSpec(self.sequence, self.omega)


def _L(m: int, a: float, periodic: bool = False) -> np.ndarray:
    L = a * np.eye(m) - np.eye(m, k=-1)
    if periodic:
        L[0, -1] = -1.0
    return L


def _step_matrix(c: str, cfg: TestEquationConfig, L: np.ndarray) -> np.ndarray:
    m = len(L)
    if c == "S":
        return np.eye(m) - cfg.omega / (1.0 + cfg.tau * cfg.lam) * L
    if cfg.lam == 0.0:
        return np.eye(m) - np.tril(np.ones((m, m))) @ L
    return np.eye(m)


def smoother_matrix(cfg: TestEquationConfig, phase: str = "pre",
                    periodic: bool = False) -> np.ndarray:
    L = _L(cfg.m, 1.0 + cfg.tau * cfg.lam, periodic)
    E = np.eye(cfg.m)
    for c in SmootherSpec(cfg.sequence, cfg.omega).steps(phase):
        E = _step_matrix(c, cfg, L) @ E
    return E


def testeq_iteration_matrix(cfg: TestEquationConfig, periodic: bool = False) -> np.ndarray:
    """Error propagator of one two-grid cycle (or of the pre-smoother alone).

    ``periodic=True`` wraps the time axis around; its eigenvalues are then
    exactly the Fourier symbol values at the discrete frequencies, and the
    auxiliary correction is only defined for ``lam > 0``.
    """
    if cfg.m > MAX_DENSE_M:
        raise ValueError(f"dense analysis is capped at m = {MAX_DENSE_M}")
    if periodic and cfg.lam == 0.0:
        raise ValueError("the periodic problem is singular for lam = 0")
    E_pre = smoother_matrix(cfg, "pre", periodic)
    if cfg.coarsening == "none":
        return E_pre
    if cfg.m % 2:
        raise ValueError("time coarsening needs an even number of steps")
    m, mc = cfg.m, cfg.m // 2
    L = _L(m, 1.0 + cfg.tau * cfg.lam, periodic)
    Lc = _L(mc, 1.0 + 2.0 * cfg.tau * cfg.lam, periodic)
    P = np.zeros((m, mc))
    P[np.arange(m), np.arange(m) // 2] = 1.0
    cgc = np.eye(m) - P @ np.linalg.solve(Lc, P.T @ L)
    return smoother_matrix(cfg, "post", periodic) @ cgc @ E_pre


def testeq_symbol(cfg: TestEquationConfig, theta: float) -> np.ndarray:
    """2x2 Fourier symbol of the two-grid cycle on the modes (theta, theta + pi).

    The m -> infinity counterpart of :func:`testeq_iteration_matrix`;
    ``theta`` ranges over (-pi/2, pi/2].
    """
    a = 1.0 + cfg.tau * cfg.lam
    z = np.exp(-1j * theta)
    Lh = np.diag([a - z, a + z])
    S = np.eye(2) - cfg.omega / a * Lh
    A = np.zeros((2, 2)) if cfg.lam == 0.0 else np.eye(2)

    def word(steps):
        E = np.eye(2, dtype=complex)
        for c in steps:
            E = (S if c == "S" else A) @ E
        return E

    spec = SmootherSpec(cfg.sequence, cfg.omega)
    pre, post = word(spec.steps("pre")), word(spec.steps("post"))
    if cfg.coarsening == "none":
        return pre
    # restriction sums fine pairs, prolongation duplicates
    R = np.array([[1.0 + 1.0 / z, 1.0 - 1.0 / z]])
    P = np.array([[(1.0 + z) / 2.0], [(1.0 - z) / 2.0]])
    Lc = 1.0 + 2.0 * cfg.tau * cfg.lam - z * z
    return post @ (np.eye(2) - P @ R @ Lh / Lc) @ pre


def lfa_rate(cfg: TestEquationConfig, n_theta: int = 2048) -> float:
    """Supremum over time frequencies of the symbol's spectral radius.

    The grid is offset to avoid theta = 0, where the symbol is singular for lam = 0.
    """
    thetas = -np.pi / 2 + np.pi * (np.arange(n_theta) + 0.5) / n_theta
    return max(float(np.abs(np.linalg.eigvals(testeq_symbol(cfg, t))).max()) for t in thetas)


def spectral_radius(E: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(E)).max())


def power_iteration_radius(E: np.ndarray, iterations: int = 5000, seed: int = 0,
                           window: int = 2000) -> float:
    """Spectral radius by power iteration: geometric mean growth over the last ``window`` steps.

    The long window averages out the beating of complex-conjugate dominant pairs.
    """
    x = np.random.default_rng(seed).random(len(E))
    x /= np.linalg.norm(x)
    logs = []
    for _ in range(iterations):
        x = E @ x
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return 0.0
        logs.append(np.log(nrm))
        x /= nrm
    return float(np.exp(np.mean(logs[-window:])))


def testeq_rate(cfg: TestEquationConfig, method: str = "dense") -> float:
    if method == "dense":
        return spectral_radius(testeq_iteration_matrix(cfg))
    if method == "lfa":
        return lfa_rate(cfg)
    raise ValueError(f"unknown method {method!r}")


def testeq_rate_sweep(lams, template: TestEquationConfig = TestEquationConfig(),
                      sequences=None, method: str = "dense") -> list[dict]:
    """Rates per (sequence, lam). ``method`` is "dense" (finite m) or "lfa" (m -> infinity)."""
    sequences = sequences or [template.sequence]
    rows = []
    for seq in sequences:
        for lam in lams:
            cfg = replace(template, lam=float(lam), sequence=seq)
            rows.append({"lambda": float(lam), "sequence": seq, "rate": testeq_rate(cfg, method)})
    return rows


def worst_case(rows: list[dict]) -> dict[str, float]:
    """Largest rate per sequence over the swept lam values.

    A spatial problem contains every mode with parameter between 0 and its
    largest eigenvalue, so its rate is the worst case over that band.
    """
    out: dict[str, float] = {}
    for r in rows:
        out[r["sequence"]] = max(out.get(r["sequence"], 0.0), r["rate"])
    return out


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "sequence", "rate"])
    for r in rows:
        w.writerow([repr(r["lambda"]), r["sequence"], repr(r["rate"])])
    return buf.getvalue()


def semidiscrete_spectrum(M, K, count: int | None = None, vectors: bool = False):
    """Generalized eigenvalues of K x = lam M x, ascending (dense, small n)."""
    M = M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)
    K = K.toarray() if hasattr(K, "toarray") else np.asarray(K, dtype=float)
    n = len(M)
    if n > 3000:
        raise ValueError("dense eigensolve is limited to n <= 3000")
    for name, A in (("M", M), ("K", K)):
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(np.abs(A).max(), 1e-300)):
            raise ValueError(f"{name} is not symmetric")
    subset = None if count is None else (0, min(count, n) - 1)
    w, V = sla.eigh(K, M, subset_by_index=subset)
    return (w, V) if vectors else w
