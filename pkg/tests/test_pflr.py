import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdfts import _bcd
from hdfts.funcspace import BasisSpec, FunctionalPanel
from hdfts.pflr import (build_design_pflr, check_re_mixed, estimation_error_pflr, lambda_max_pflr,
                        population_rayleigh_inf_mixed, solve_mixed_lasso, solver_state)
from hdfts.procgen import ErrorSpec, MixedProcessSpec, fma, gen_pflr_data, make_pflr_scenario, \
    score_loading, white_noise
from oracles import cd_lasso, fista_group_lasso


def _scenario(p=4, d=3, G=5, support=(0, 2), scalar_support=(1,)):
    b = BasisSpec(G=G)
    C = score_loading(p, G, d, {(0, 0, 0): 0.5})
    mixed = MixedProcessSpec(fma(p, b), (np.eye(d),), C)
    return make_pflr_scenario(mixed, list(support), list(scalar_support), rank=3)


def _design(seed=0, n=100, **kw):
    scn = _scenario(**kw)
    return build_design_pflr(gen_pflr_data(scn, n, seed), ("fixed", 3)), scn


def _scalar_only(rng, n=60, d=5, scale=None):
    Z = rng.standard_normal((n, d)) * (scale if scale is not None else 1.0)
    y = Z[:, 0] - 2 * Z[:, 3] + 0.5 * rng.standard_normal(n)
    return FunctionalPanel(np.zeros((n, 0, 3)), BasisSpec(G=3), scalar=Z, response=y)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.3])
def test_p0_matches_textbook_lasso_raw(rng, lam):
    P = _scalar_only(rng, scale=np.array([1.0, 2.0, 0.5, 3.0, 1.5]))
    des = build_design_pflr(P)
    assert des.p == 0
    fit = solve_mixed_lasso(des, 0.0, lam, tol=1e-12, standardize_scalar=False)
    np.testing.assert_allclose(fit.gamma, cd_lasso(P.scalar, P.response, lam), atol=1e-8)


def test_p0_standardized_matches_lasso_on_scaled_columns(rng):
    P = _scalar_only(rng, scale=np.array([1.0, 2.0, 0.5, 3.0, 1.5]))
    des = build_design_pflr(P)
    fit = solve_mixed_lasso(des, 0.0, 0.1, tol=1e-12)
    Zs = P.scalar / des.zscale
    ref = cd_lasso(Zs, P.response, 0.1) / des.zscale
    np.testing.assert_allclose(fit.gamma, ref, atol=1e-8)
    assert fit.support_scalar == frozenset(int(k) for k in np.nonzero(ref)[0])


def test_d0_matches_group_lasso_oracle():
    b = BasisSpec(G=4)
    scn = make_pflr_scenario(MixedProcessSpec(fma(3, b), (np.eye(1),)), [1], [], rank=2)
    P = gen_pflr_data(scn, 80, 2)
    P0 = FunctionalPanel(P.data, P.basis, response=P.response)
    des = build_design_pflr(P0, ("fixed", 2))
    assert des.d == 0
    lam = 0.3 * lambda_max_pflr(des)[0]
    fit = solve_mixed_lasso(des, lam, tol=1e-11)
    ref = fista_group_lasso(des.Omega, des.y, des.offsets, np.full(3, lam))[:, 0]
    np.testing.assert_allclose(fit.B, ref, atol=1e-6)


def test_standardized_blocks():
    des, _ = _design()
    g = des.gram()
    for j in range(des.p):
        lo, hi = des.offsets[j], des.offsets[j + 1]
        np.testing.assert_allclose(g[lo:hi, lo:hi], np.eye(hi - lo), atol=1e-10)
    np.testing.assert_allclose(des.zscale, np.sqrt(np.mean(des.Z ** 2, axis=0)))


@pytest.mark.parametrize("standardize", [True, False])
def test_lambda_max_pair(standardize):
    des, _ = _design()
    l1, l2 = lambda_max_pflr(des, standardize)
    fit = solve_mixed_lasso(des, l1 * (1 + 1e-9), l2 * (1 + 1e-9), standardize_scalar=standardize)
    assert not fit.B.any() and not fit.gamma.any()
    part = solve_mixed_lasso(des, l1 * (1 + 1e-9), 0.9 * l2, standardize_scalar=standardize)
    assert part.support_scalar


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), f1=st.floats(0.05, 0.9), f2=st.floats(0.05, 0.9),
       standardize=st.booleans())
def test_kkt_and_monotone(seed, f1, f2, standardize):
    des, _ = _design(seed=seed, n=60)
    l1, l2 = lambda_max_pflr(des, standardize)
    fit = solve_mixed_lasso(des, f1 * l1, f2 * l2, standardize_scalar=standardize)
    assert fit.converged and fit.kkt <= 1e-8
    X, Y, offs, lams, coef = solver_state(des, fit)
    assert _bcd.kkt_residual(X, Y - X @ coef, coef, offs, lams) <= 1e-8
    tr = np.array(fit.objective_trace)
    assert np.all(np.diff(tr) <= 1e-13 * tr[0])


def test_lambda2_defaults_to_lambda1():
    des, _ = _design()
    a = solve_mixed_lasso(des, 0.05)
    assert a.lam2 == a.lam1
    with pytest.raises(ValueError):
        solve_mixed_lasso(des, -0.1)


def test_scalar_permutation_equivariance():
    des, _ = _design(seed=5)
    perm = np.array([2, 0, 1])
    des2 = des.__class__(des.y, des.scores, des.Omega, des.Z[:, perm], des.D, des.Dinv, des.offsets, des.q,
                         des.zscale[perm], des.es_x)
    a = solve_mixed_lasso(des, 0.05, 0.02, tol=1e-11)
    b = solve_mixed_lasso(des2, 0.05, 0.02, tol=1e-11)
    np.testing.assert_allclose(b.gamma, a.gamma[perm], atol=1e-8)
    np.testing.assert_allclose(b.beta, a.beta, atol=1e-8)


def test_functional_block_permutation_equivariance():
    des, _ = _design(seed=6)
    order = [3, 1, 0, 2]
    offs = des.offsets
    cols = np.concatenate([np.arange(offs[j], offs[j + 1]) for j in order])
    new_offs = np.r_[0, np.cumsum([offs[j + 1] - offs[j] for j in order])].astype(np.int64)
    es = des.es_x.__class__(des.es_x.eigenvalues[order], des.es_x.eigenfunctions[order],
                            des.es_x.scores[:, order], des.es_x.basis, des.es_x.q[order])
    des2 = des.__class__(des.y, des.scores[:, cols], des.Omega[:, cols], des.Z, tuple(des.D[j] for j in order),
                         tuple(des.Dinv[j] for j in order), new_offs, des.q[order], des.zscale, es)
    a = solve_mixed_lasso(des, 0.05, tol=1e-11)
    b = solve_mixed_lasso(des2, 0.05, tol=1e-11)
    np.testing.assert_allclose(b.beta, a.beta[order], atol=1e-8)
    assert b.support_func == frozenset(order.index(j) for j in a.support_func)


def test_recovers_both_supports():
    des, scn = _design(seed=1, n=400, p=6, d=4, support=(1, 4), scalar_support=(0, 3))
    best = 0.0
    l1, l2 = lambda_max_pflr(des)
    for f in np.logspace(0, -2, 20):
        fit = solve_mixed_lasso(des, f * l1, f * l2)
        e = estimation_error_pflr(fit, scn)
        best = max(best, min(e["func_f1"], e["scalar_f1"]))
    assert best == 1.0


def test_estimation_error_combined():
    des, scn = _design()
    fit = solve_mixed_lasso(des, 0.05)
    e = estimation_error_pflr(fit, scn, q=4, alpha=2.0)
    assert e["combined"] == pytest.approx(e["l1_func"] + 4.0 * e["l1_scalar"])
    with pytest.raises(ValueError):
        estimation_error_pflr(fit, (scn.beta[:2], scn.gamma), alpha=2.0)


def test_population_mixed_mu_oracles():
    b = BasisSpec(G=1)
    X = white_noise(1, b, ErrorSpec(C=1.0))
    assert population_rayleigh_inf_mixed(MixedProcessSpec(X, (np.eye(1),)), 1) == pytest.approx(1.0)
    w = 0.8
    M = MixedProcessSpec(X, (np.eye(1),), np.array([[w]]))
    # covariance of (zeta, Z) = [[1, w], [w, 1 + w^2]]
    tr, det = 2 + w * w, 1.0
    assert population_rayleigh_inf_mixed(M, 1) == pytest.approx((tr - np.sqrt(tr * tr - 4 * det)) / 2, abs=1e-12)


def test_check_re_mixed():
    des, _ = _design(n=300)
    out = check_re_mixed(des, trials=40, sparsity=2, seed=0)
    assert out["violation_fraction"] == 0.0
    assert out["min_eig_proxy"] == pytest.approx(np.linalg.eigvalsh(des.gram())[0])


def test_build_requires_scalar_response():
    b = BasisSpec(G=2)
    with pytest.raises(ValueError):
        build_design_pflr(FunctionalPanel(np.zeros((5, 1, 2)), b))
