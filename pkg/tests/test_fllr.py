import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdfts import _bcd
from hdfts.funcspace import BasisSpec, BlockKernel, FunctionalPanel
from hdfts.fllr import (build_design, check_re_condition, estimation_error, fit_path, lagged_score_cov, lambda_grid,
                        lambda_max, population_rayleigh_inf, solve_group_lasso, support_metrics)
from hdfts.procgen import fma, gen_fllr_data, make_fllr_scenario, white_noise
from oracles import fista_group_lasso


def _design(seed=0, n=80, p=4, L=1, G=5, support=((0, 0), (1, 2)), q=3):
    scn = make_fllr_scenario(fma(p, BasisSpec(G=G)), L, list(support), rank=q)
    panel = gen_fllr_data(scn, n, seed)
    return build_design(panel, L, ("fixed", q)), scn, panel


def test_design_rows_are_lagged_scores():
    d, _, panel = _design()
    L = d.L
    np.testing.assert_array_equal(d.U, d.es_y.scores[L:, 0, :d.q2])
    np.testing.assert_array_equal(d.V(1, 2), d.es_x.scores[L - 1:panel.n - 1, 2, :3])
    assert d.blocks[:4] == ((0, 0), (0, 1), (0, 2), (0, 3))
    assert d.m == panel.n - L


def test_standardizer_squares_to_block_gram():
    d, _, _ = _design()
    for b, (h, j) in enumerate(d.blocks):
        V = d.V(h, j)
        np.testing.assert_allclose(d.D[b] @ d.D[b], V.T @ V / d.m, atol=1e-12)
    gram = d.gram()
    for b in range(len(d.blocks)):
        lo, hi = d.offsets[b], d.offsets[b + 1]
        np.testing.assert_allclose(gram[lo:hi, lo:hi], np.eye(hi - lo), atol=1e-10)


def test_design_errors():
    _, _, panel = _design()
    with pytest.raises(ValueError):
        build_design(panel, panel.n)
    with pytest.raises(ValueError):
        build_design(FunctionalPanel(panel.data, panel.basis), 1)


def test_lambda_max_brackets_zero_solution():
    d, _, _ = _design()
    lm = lambda_max(d)
    assert not solve_group_lasso(d, lm * (1 + 1e-9)).B.any()
    assert solve_group_lasso(d, lm).support == frozenset()
    assert solve_group_lasso(d, 0.95 * lm).support


def test_zero_penalty_is_least_squares():
    d, _, _ = _design(n=120, p=2, support=((0, 0), (1, 1)))
    fit = solve_group_lasso(d, 0.0, tol=1e-10)
    ols = np.linalg.lstsq(d.Omega, d.U, rcond=None)[0]
    np.testing.assert_allclose(fit.B, ols, atol=1e-7)


def test_matches_proximal_gradient_oracle():
    d, _, _ = _design(seed=3)
    lam = 0.2 * lambda_max(d)
    fit = solve_group_lasso(d, lam, tol=1e-10)
    ref = fista_group_lasso(d.Omega, d.U, d.offsets, np.full(len(d.blocks), lam))
    np.testing.assert_allclose(fit.B, ref, atol=1e-6)
    lams = np.full(len(d.blocks), lam)
    assert _bcd.objective(d.Omega, d.U, fit.B, d.offsets, lams) <= \
        _bcd.objective(d.Omega, d.U, ref, d.offsets, lams) + 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), frac=st.floats(0.05, 0.9))
def test_kkt_and_monotone_objective(seed, frac):
    d, _, _ = _design(seed=seed, n=60, p=3)
    fit = solve_group_lasso(d, frac * lambda_max(d))
    assert fit.converged and fit.kkt <= 1e-8
    R = d.U - d.Omega @ fit.B
    assert _bcd.kkt_residual(d.Omega, R, fit.B, d.offsets, np.full(len(d.blocks), fit.lam)) <= 1e-8
    tr = np.array(fit.objective_trace)
    assert np.all(np.diff(tr) <= 1e-13 * tr[0])


def test_response_scaling_equivariance():
    d, _, _ = _design(seed=4)
    c = 3.0
    fit = solve_group_lasso(d, 0.3 * lambda_max(d), tol=1e-11)
    d2 = d.__class__(c * d.U, d.Z, d.Omega, d.D, d.Dinv, d.offsets, d.blocks, d.L, d.q1, d.q2, d.es_x, d.es_y)
    fit2 = solve_group_lasso(d2, c * fit.lam, tol=1e-11)
    np.testing.assert_allclose(fit2.B, c * fit.B, atol=1e-8)
    assert fit2.support == fit.support


def test_surfaces_reconstruct_from_psi():
    d, _, _ = _design()
    fit = solve_group_lasso(d, 0.2 * lambda_max(d))
    b = d.blocks.index((1, 2))
    lo, hi = d.offsets[b], d.offsets[b + 1]
    E = d.es_x.eigenfunctions[2, :3]
    F = d.es_y.eigenfunctions[0, :d.q2]
    np.testing.assert_allclose(fit.surfaces.coef[1, 2], E.T @ fit.Psi[lo:hi] @ F, atol=1e-14)
    np.testing.assert_allclose(fit.Psi[lo:hi], d.Dinv[b] @ fit.B[lo:hi], atol=1e-14)


def test_path_warm_start_and_order():
    d, _, _ = _design()
    grid = lambda_grid(d, 8, 0.05)
    assert grid[0] == pytest.approx(lambda_max(d))
    fits = fit_path(d, grid)
    assert [f.lam for f in fits] == list(grid)
    assert all(f.converged for f in fits)
    cold = solve_group_lasso(d, grid[-1])
    np.testing.assert_allclose(fits[-1].B, cold.B, atol=1e-6)
    with pytest.raises(ValueError):
        fit_path(d, grid[::-1])
    with pytest.raises(ValueError):
        solve_group_lasso(d, -1.0)


def test_recovers_support_with_signal():
    d, scn, _ = _design(seed=1, n=400, p=6, support=((0, 1), (1, 4)))
    fits = fit_path(d, lambda_grid(d, 20, 0.01))
    best = max(estimation_error(f, scn.beta)["support_f1"] for f in fits)
    assert best == 1.0


def test_support_metrics():
    assert support_metrics(set(), {1}) == {"support_precision": 1.0, "support_recall": 0.0, "support_f1": 0.0}
    m = support_metrics({1, 2}, {2, 3})
    assert m["support_f1"] == pytest.approx(0.5)
    assert support_metrics(set(), set())["support_f1"] == 1.0


def test_estimation_error_l1():
    b = BasisSpec(G=2)
    t = np.zeros((1, 2, 2, 2))
    t[0, 0] = np.eye(2)
    e = np.zeros_like(t)
    e[0, 1] = [[3.0, 0], [0, 4.0]]
    res = estimation_error(BlockKernel(e, b), BlockKernel(t, b))
    assert res["l1_func"] == pytest.approx(np.sqrt(2) + 5.0)
    assert res["support_precision"] == 0.0
    with pytest.raises(ValueError):
        estimation_error(BlockKernel(e[:, :1], b), BlockKernel(t, b))


def test_population_mu_white_noise_is_one():
    assert population_rayleigh_inf(white_noise(3, BasisSpec(G=4)), 2, 3) == pytest.approx(1.0, abs=1e-12)


def test_population_mu_scalar_ma1_oracle():
    # scalar MA(1) with coefficient a and L = 1: correlation matrix [[1, r], [r, 1]], r = a/(1+a^2)
    a = 0.5
    spec = fma(1, BasisSpec(G=1), diag=(1.0, a), offdiag=(0.0, 0.0))
    C = lagged_score_cov(spec.to_linear(), 1, 1)
    np.testing.assert_allclose(C, [[1, 0.4], [0.4, 1]], atol=1e-12)
    assert population_rayleigh_inf(spec, 1, 1) == pytest.approx(0.6, abs=1e-12)


def test_re_check_reports():
    d, _, _ = _design(n=200)
    out = check_re_condition(d, trials=50, tau1=0.0, sparsity=2, seed=1)
    assert out["violation_fraction"] == 0.0
    assert out["min_margin"] >= -1e-10
    lo = check_re_condition(d, trials=50, tau2=10.0, seed=1)
    assert lo["violation_fraction"] == 1.0
