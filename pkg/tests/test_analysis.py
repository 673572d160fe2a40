import numpy as np
import pytest
from hypothesis import given, strategies as st

from stmg import analysis as an
from stmg.analysis import (
    TestEquationConfig, lfa_rate, power_iteration_radius, semidiscrete_spectrum, smoother_matrix,
    spectral_radius, sweep_csv, worst_case,
)
from stmg.fem import assemble_operators
from stmg.mesh import build_base_mesh, build_hierarchy

LAMS = np.concatenate([[0.0], np.logspace(-4, 3, 29)])


@pytest.mark.parametrize("omega", [0.5, 0.3, 1.0])
def test_m1_smoother_factor(omega):
    E = an.testeq_iteration_matrix(TestEquationConfig(0.0, 1, omega=omega, sequence="S",
                                                   coarsening="none"))
    assert E.shape == (1, 1) and E[0, 0] == 1 - omega


def test_smoother_alone_large_lambda():
    cfg = TestEquationConfig(lam=1e3, m=64, sequence="S", coarsening="none")
    assert spectral_radius(an.testeq_iteration_matrix(cfg)) <= 0.5 + 1e-3


def test_two_grid_lambda_zero_exact():
    for seq in ("SAS", "SA", "AS", "A"):
        E = an.testeq_iteration_matrix(TestEquationConfig(0.0, 32, sequence=seq))
        assert np.abs(E).max() <= 1e-12


def test_two_grid_lambda_zero_smoother_only_bound():
    E = an.testeq_iteration_matrix(TestEquationConfig(0.0, 64, sequence="S"))
    assert spectral_radius(E) <= 0.5 + 1e-6


@pytest.mark.parametrize("seq", ["S", "SAS", "SA", "SSASS"])
def test_worst_case_bound_dense(seq):
    rows = an.testeq_rate_sweep(LAMS, TestEquationConfig(m=64), [seq])
    assert worst_case(rows)[seq] <= 0.5 + 1e-6


@pytest.mark.parametrize("seq", ["S", "SAS", "SA", "SSASS"])
def test_worst_case_bound_lfa(seq):
    rows = an.testeq_rate_sweep(LAMS, TestEquationConfig(), [seq], method="lfa")
    assert worst_case(rows)[seq] <= 0.5 + 1e-6


def test_smoother_ordering():
    seqs = ["SSASS", "SAS", "SA"]
    rows = an.testeq_rate_sweep(LAMS[1:], TestEquationConfig(), seqs, method="lfa")
    by = {(r["sequence"], r["lambda"]): r["rate"] for r in rows}
    for lam in LAMS[1:]:
        assert by["SSASS", lam] <= by["SAS", lam] + 0.1
        assert by["SAS", lam] <= by["SA", lam] + 0.1
    wc = worst_case(rows)
    assert wc["SSASS"] < wc["SAS"] < wc["SA"]
    # one more S on each side helps, but far less than squaring
    assert wc["SSASS"] == pytest.approx(0.2, abs=0.1)
    assert wc["SAS"] == pytest.approx(0.3, abs=0.1)
    assert wc["SSASS"] > wc["SAS"] ** 2 + 0.05
    assert wc["SA"] ** 2 == pytest.approx(wc["SAS"], abs=0.05)


def test_symbol_matches_periodic_matrix():
    cfg = TestEquationConfig(lam=0.3, m=32, sequence="SAS")
    E = an.testeq_iteration_matrix(cfg, periodic=True)
    eig = np.sort(np.abs(np.linalg.eigvals(E)))
    thetas = 2 * np.pi * np.arange(cfg.m // 2) / cfg.m
    thetas = np.where(thetas > np.pi / 2, thetas - np.pi, thetas)
    sym = np.sort(np.concatenate([np.abs(np.linalg.eigvals(an.testeq_symbol(cfg, t)))
                                  for t in thetas]))
    assert np.allclose(eig, sym, atol=1e-10)


def test_periodic_lambda_zero_rejected():
    with pytest.raises(ValueError):
        an.testeq_iteration_matrix(TestEquationConfig(0.0, 8), periodic=True)


@pytest.mark.parametrize("lam,seq", [(0.05, "SAS"), (1.0, "SA"), (0.3, "S"), (5.0, "SSASS")])
def test_dense_vs_power_iteration(lam, seq):
    E = an.testeq_iteration_matrix(TestEquationConfig(lam, 64, sequence=seq), periodic=True)
    assert power_iteration_radius(E) == pytest.approx(spectral_radius(E), abs=1e-6)


def test_size_cap_and_validation():
    with pytest.raises(ValueError):
        an.testeq_iteration_matrix(TestEquationConfig(m=4096))
    with pytest.raises(ValueError):
        an.testeq_iteration_matrix(TestEquationConfig(m=7))
    with pytest.raises(ValueError):
        TestEquationConfig(lam=-1.0)
    with pytest.raises(ValueError):
        TestEquationConfig(sequence="SX")
    with pytest.raises(ValueError):
        an.testeq_rate(TestEquationConfig(), "magic")


def test_scalar_auxiliary_step():
    # lam = 0: exact time integration wipes the error; lam > 0: no effect
    for seq in ("A", "SA", "SSA"):
        for phase in ("pre", "post"):
            E = smoother_matrix(TestEquationConfig(0.0, 8, sequence=seq), phase)
            assert np.abs(E).max() <= 1e-14
    S = smoother_matrix(TestEquationConfig(0.2, 8, sequence="S"))
    assert np.allclose(smoother_matrix(TestEquationConfig(0.2, 8, sequence="SA")), S)
    assert np.allclose(smoother_matrix(TestEquationConfig(0.2, 8, sequence="AS"), "post"), S)


def test_sweep_csv():
    rows = an.testeq_rate_sweep([0.0, 1.0], TestEquationConfig(m=8), ["SAS"])
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "lambda,sequence,rate"
    assert len(text.splitlines()) == 3
    assert text == sweep_csv(an.testeq_rate_sweep([0.0, 1.0], TestEquationConfig(m=8), ["SAS"]))


@given(st.floats(1e-4, 1e3), st.sampled_from(["S", "SAS", "AS"]))
def test_lfa_bound_property(lam, seq):
    assert lfa_rate(TestEquationConfig(lam=lam, sequence=seq), 256) <= 0.5 + 1e-6


@pytest.fixture(scope="module")
def spectrum():
    mesh = build_hierarchy(build_base_mesh("two_tets"), 2).finest
    ops = assemble_operators(mesh)
    w, V = semidiscrete_spectrum(ops.M, ops.K, vectors=True)
    return ops, w, V


def test_spectrum_real_nonnegative(spectrum):
    ops, w, _ = spectrum
    assert np.isrealobj(w)
    assert w.min() >= -1e-10 * w.max()
    # an independent non-symmetric route gives the same real spectrum
    ev = np.linalg.eigvals(np.linalg.solve(ops.M.toarray(), ops.K.toarray()))
    assert np.abs(ev.imag).max() <= 1e-10 * w.max()
    assert np.allclose(np.sort(ev.real), w, atol=1e-8 * w.max())


def test_spectrum_kernel(spectrum):
    ops, w, V = spectrum
    zero = np.abs(w) <= 1e-10 * w.max()
    assert zero.sum() == ops.n_nodes - 1
    assert np.linalg.matrix_rank(ops.G.toarray()) == ops.n_nodes - 1
    G = ops.G.toarray()
    Z = V[:, zero]
    coef, *_ = np.linalg.lstsq(G, Z, rcond=None)
    assert np.abs(G @ coef - Z).max() <= 1e-8 * np.abs(Z).max()


def test_spectrum_count_and_errors(spectrum):
    ops, w, _ = spectrum
    assert np.allclose(semidiscrete_spectrum(ops.M, ops.K, count=5), w[:5])
    A = ops.M.toarray()
    A[0, 1] += 1.0
    with pytest.raises(ValueError):
        semidiscrete_spectrum(A, ops.K)
