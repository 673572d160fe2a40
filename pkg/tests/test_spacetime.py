import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from stmg.fem import assemble_operators
from stmg.linalg import SolverOptions
from stmg.mesh import build_base_mesh, build_hierarchy
from stmg.parallel import SlabPool
from stmg.spacetime import (
    SmootherSpec, apply_L, assemble_rhs, build_level, correction_A, forward_solve, hybrid_smooth,
    prefix_sum_time, residual, smoother_S,
)

from conftest import scalar_level


@pytest.fixture(scope="module")
def small():
    """41-edge mesh: small enough for dense oracles."""
    mesh = build_hierarchy(build_base_mesh("two_tets"), 1).finest
    return build_level(assemble_operators(mesh), 0.3, 5)


@pytest.fixture(scope="module")
def medium():
    mesh = build_hierarchy(build_base_mesh("two_tets"), 2).finest
    return build_level(assemble_operators(mesh), 0.05, 6)


def dense_L(level):
    A, M = level.A_tau.toarray(), level.M.toarray()
    return np.kron(np.eye(level.m), A) - np.kron(np.eye(level.m, k=-1), M)


def rand(level, seed):
    return np.random.default_rng(seed).standard_normal((level.m, level.n))


def test_level_invariants(medium):
    D = medium.A_tau - (medium.M + medium.tau * medium.ops.K)
    assert abs(D).max() <= 1e-14 * abs(medium.A_tau).max()
    with pytest.raises(ValueError):
        build_level(medium.ops, 0.0, 4)
    with pytest.raises(ValueError):
        build_level(medium.ops, 1.0, 0)


def test_apply_L_scalar():
    lvl = scalar_level(2)
    assert apply_L(lvl, np.array([[3.0], [5.0]])).ravel().tolist() == [3.0, 2.0]


def test_apply_L_matches_dense(small):
    X = rand(small, 0)
    assert np.allclose(apply_L(small, X).ravel(), dense_L(small) @ X.ravel(), rtol=0, atol=1e-13)
    assert not apply_L(small, small.zeros()).any()
    with pytest.raises(ValueError):
        apply_L(small, np.zeros((small.m + 1, small.n)))


def test_forward_solve_inverse(medium):
    F = rand(medium, 1)
    X = forward_solve(medium, F)
    assert np.linalg.norm(apply_L(medium, X) - F) <= 1e-12 * np.linalg.norm(F)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_apply_L_workers(medium, workers):
    X = rand(medium, 2)
    with SlabPool(workers) as pool:
        assert np.array_equal(apply_L(medium, X, pool), apply_L(medium, X))


def test_rhs(medium):
    assert not assemble_rhs(medium).any()
    u0 = np.random.default_rng(0).random(medium.n)
    F = assemble_rhs(medium, u0=u0)
    assert np.allclose(F[0], medium.M @ u0) and not F[1:].any()
    f = np.random.default_rng(1).random(medium.n)
    F = assemble_rhs(medium, lambda t: f)
    assert all(np.array_equal(F[k], F[1]) for k in range(2, medium.m))
    assert np.allclose(F[0], medium.tau * f)
    times = []
    assemble_rhs(medium, lambda t: times.append(t) or f)
    assert np.allclose(times, medium.tau * np.arange(1, medium.m + 1))
    with pytest.raises(ValueError):
        assemble_rhs(medium, u0=np.ones(3))
    with pytest.raises(ValueError):
        assemble_rhs(medium, lambda t: np.ones(3))


def test_S_fixed_point(medium):
    X = rand(medium, 3)
    F = apply_L(medium, X)
    assert np.allclose(smoother_S(medium, X, F), X, rtol=0, atol=1e-12)
    for seq in ("A", "SAS", "SSASS"):
        out = hybrid_smooth(medium, X, F, SmootherSpec(seq))
        assert np.allclose(out, X, rtol=0, atol=1e-10)


@pytest.mark.parametrize("omega", [0.5, 0.8])
def test_S_single_block(medium, omega):
    lvl = build_level(medium.ops, medium.tau, 1)
    x_star = rand(lvl, 4)
    F = apply_L(lvl, x_star)
    X = rand(lvl, 5)
    out = smoother_S(lvl, X, F, omega=omega)
    assert np.allclose(out - x_star, (1 - omega) * (X - x_star), rtol=0, atol=1e-12)


def test_S_composition(medium):
    X, F = rand(medium, 6), rand(medium, 7)
    two = smoother_S(medium, X, F, nu=2)
    assert np.array_equal(two, smoother_S(medium, smoother_S(medium, X, F), F))
    assert np.array_equal(two, hybrid_smooth(medium, X, F, SmootherSpec("SS")))


def test_prefix_examples():
    X = np.array([[1.0], [2.0], [3.0]])
    assert prefix_sum_time(X).ravel().tolist() == [1, 3, 6]
    assert np.array_equal(np.diff(prefix_sum_time(X), axis=0, prepend=0.0), X)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_annihilation(medium, seed):
    X, F = rand(medium, 10 + seed), rand(medium, 20 + seed)
    G = medium.G
    before = np.linalg.norm(residual(medium, X, F) @ G)
    after = np.linalg.norm(residual(medium, correction_A(medium, X, F), F) @ G)
    assert after <= 1e-10 * before


def test_gradient_annihilation_dense_oracle(small):
    m, n, G = small.m, small.n, small.G.toarray()
    L = dense_L(small)
    GG = np.kron(np.eye(m), G)
    # G^T L G is the backward difference in time times Kn
    D = np.eye(m) - np.eye(m, k=-1)
    assert np.allclose(GG.T @ L @ GG, np.kron(D, small.ops.Kn.toarray()), atol=1e-13)
    x, f = rand(small, 1).ravel(), rand(small, 2).ravel()
    Knp = np.linalg.pinv(small.ops.Kn.toarray())
    Sigma = np.tril(np.ones((m, m)))
    x_new = x + GG @ np.kron(Sigma, Knp) @ GG.T @ (f - L @ x)
    X_new = correction_A(small, x.reshape(m, n), f.reshape(m, n))
    assert np.allclose(X_new.ravel(), x_new, atol=1e-10)
    assert np.linalg.norm(GG.T @ (f - L @ x_new)) <= 1e-10 * np.linalg.norm(GG.T @ (f - L @ x))


def test_pure_gradient_error_removed(small):
    Y = np.random.default_rng(3).standard_normal((small.m, small.ops.n_nodes))
    F = apply_L(small, Y @ small.G.T)
    X = correction_A(small, small.zeros(), F)
    assert np.linalg.norm(residual(small, X, F)) <= 1e-12 * np.linalg.norm(F)


def test_solenoidal_residual_untouched(small):
    G = small.G.toarray()
    V = rand(small, 4)
    R = V - V @ G @ np.linalg.pinv(G)  # rows orthogonal to range(G)
    assert np.abs(R @ G).max() < 1e-12
    X = rand(small, 5)
    out = correction_A(small, X, apply_L(small, X) + R)
    assert np.allclose(out, X, rtol=0, atol=1e-12)


@pytest.mark.parametrize("bc", ["neumann", "dirichlet"])
def test_S_does_not_damp_gradients(bc):
    mesh = build_hierarchy(build_base_mesh("two_tets"), 2).finest
    ops = assemble_operators(mesh, bc=bc)
    rng = np.random.default_rng(0)
    for tau in (1e-3, 1.0, 100.0):
        lvl = build_level(ops, tau, 6)
        for _ in range(3):
            E = rng.standard_normal((lvl.m, ops.n_nodes)) @ ops.G.T
            after = smoother_S(lvl, E, lvl.zeros())
            ratio = np.linalg.norm(after @ ops.G) / np.linalg.norm(E @ ops.G)
            assert ratio >= 0.45


def test_spec_order():
    assert SmootherSpec("SAS").steps("pre") == SmootherSpec("SAS").steps("post") == "SAS"
    assert SmootherSpec("SA").steps("pre") == "AS"   # A first, then S
    assert SmootherSpec("SA").steps("post") == "SA"  # reversed word: S first, then A
    for bad in ("", "SXA"):
        with pytest.raises(ValueError):
            SmootherSpec(bad)
    with pytest.raises(ValueError):
        SmootherSpec("S", omega=0.0)
    with pytest.raises(ValueError):
        SmootherSpec("S").steps("middle")


def test_hybrid_order_matters(medium):
    X, F = rand(medium, 8), rand(medium, 9)
    sa = hybrid_smooth(medium, X, F, SmootherSpec("SA"), "pre")
    manual = smoother_S(medium, correction_A(medium, X, F), F)
    assert np.array_equal(sa, manual)
    post = hybrid_smooth(medium, X, F, SmootherSpec("SA"), "post")
    assert np.array_equal(post, correction_A(medium, smoother_S(medium, X, F), F))


@given(st.sampled_from(["S", "A", "SAS", "AS", "SSASS"]), st.integers(0, 1000))
def test_affine(seq, seed):
    lvl = _LINEARITY_LEVEL
    spec = SmootherSpec(seq)
    rng = np.random.default_rng(seed)
    x1, x2, f1, f2 = (rng.standard_normal((lvl.m, lvl.n)) for _ in range(4))
    s = lambda x, f: hybrid_smooth(lvl, x, f, spec)
    base = s(lvl.zeros(), lvl.zeros())
    lhs = s(x1 + x2, f1 + f2)
    rhs = s(x1, f1) + s(x2, f2) - base
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * (1 + np.abs(lhs).max()))


_LINEARITY_LEVEL = build_level(
    assemble_operators(build_hierarchy(build_base_mesh("two_tets"), 1).finest), 0.2, 4
)


@pytest.mark.parametrize("workers", [2, 4])
def test_smoothers_bitwise_per_worker_count(medium, workers):
    X, F = rand(medium, 11), rand(medium, 12)
    spec = SmootherSpec("SAS")
    with SlabPool(workers) as pool:
        a = hybrid_smooth(medium, X, F, spec, "pre", pool)
        b = hybrid_smooth(medium, X, F, spec, "pre", pool)
    serial = hybrid_smooth(medium, X, F, spec)
    assert np.array_equal(a, b)
    assert np.allclose(a, serial, rtol=1e-12, atol=1e-12 * np.abs(serial).max())


def test_inexact_inner_solves(medium):
    lvl = build_level(medium.ops, medium.tau, medium.m, SolverOptions("cg", fixed_iterations=3))
    X, F = rand(lvl, 13), rand(lvl, 14)
    before = np.linalg.norm(residual(lvl, X, F))
    out = hybrid_smooth(lvl, X, F, SmootherSpec("SAS"))
    assert np.isfinite(out).all()
    assert np.linalg.norm(residual(lvl, out, F)) < before
