"""Partially functional linear regression.

Scalar response on functional and scalar covariates,
``y_t = sum_j <X_tj, beta_j> + Z_t^T gamma + eps_t``, estimated by a group
lasso on the standardized functional score blocks and a lasso on the
scalar coefficients, solved jointly by cyclic block coordinate descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _bcd
from .fllr import D_RIDGE, SUPPORT_TOL, _sqrt_pair, re_margins, support_metrics
from .fpca import EigenSystem, eigendecompose, select_truncation
from .funcspace import FunctionalPanel
from .procgen import LinearProcess, MixedProcessSpec, RegressionScenario, as_linear, population_eigen


@dataclass(frozen=True)
class PFLRDesign:
    """``S = (Omega, Z)``; functional block ``j`` is ``Omega[:, offsets[j]:offsets[j+1]]``.

    ``zscale[k]`` is the root mean square of scalar column k.
    """

    y: np.ndarray
    scores: np.ndarray
    Omega: np.ndarray
    Z: np.ndarray
    D: tuple
    Dinv: tuple
    offsets: np.ndarray
    q: np.ndarray
    zscale: np.ndarray
    es_x: Optional[EigenSystem]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return len(self.D)

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    def S(self) -> np.ndarray:
        return np.hstack([self.Omega, self.Z])

    def gram(self) -> np.ndarray:
        S = self.S()
        return S.T @ S / self.n


def build_design_pflr(panel: FunctionalPanel, truncation=("fixed", 3), ridge: float = D_RIDGE,
                      es_x: Optional[EigenSystem] = None) -> PFLRDesign:
    """FPCA on the functional covariates and standardization of each score block."""
    if panel.response is None or panel.response.ndim != 1:
        raise ValueError("panel needs a scalar response")
    n = panel.n
    y = np.asarray(panel.response, dtype=float)
    Z = np.zeros((n, 0)) if panel.scalar is None else np.asarray(panel.scalar, dtype=float)
    if panel.p > 0:
        es_x = es_x or eigendecompose(panel)
        q = select_truncation(es_x, truncation)
    else:
        es_x, q = None, np.zeros(0, dtype=int)
    cols, Ds, Dis, offs = [], [], [], [0]
    for j in range(len(q)):
        X = es_x.scores[:, j, :q[j]]
        D, Di = _sqrt_pair(X.T @ X / n, ridge)
        cols.append(X)
        Ds.append(D)
        Dis.append(Di)
        offs.append(offs[-1] + q[j])
    scores = np.hstack(cols) if cols else np.zeros((n, 0))
    Omega = np.hstack([c @ Di for c, Di in zip(cols, Dis)]) if cols else np.zeros((n, 0))
    zscale = np.sqrt(np.mean(Z ** 2, axis=0)) if Z.size else np.zeros(Z.shape[1])
    return PFLRDesign(y, scores, np.ascontiguousarray(Omega), Z, tuple(Ds), tuple(Dis),
                      np.array(offs, dtype=np.int64), q, zscale, es_x)


def _system(design: PFLRDesign, standardize_scalar: bool):
    """Stacked columns, block offsets and per-block curvature bounds for the solver."""
    p, d = design.p, design.d
    P = int(design.offsets[-1])
    if standardize_scalar:
        with np.errstate(divide="ignore", invalid="ignore"):
            Zs = np.where(design.zscale > 0, design.Z / np.where(design.zscale > 0, design.zscale, 1.0), 0.0)
        zl = (design.zscale > 0).astype(float)
    else:
        Zs = design.Z
        zl = design.zscale ** 2
    X = np.hstack([design.Omega, Zs])
    offsets = np.concatenate([design.offsets, P + np.arange(1, d + 1)]).astype(np.int64)
    lips = np.concatenate([np.ones(p), zl])
    return X, offsets, lips


def lambda_max_pflr(design: PFLRDesign, standardize_scalar: bool = True) -> tuple[float, float]:
    """``(lambda_1 max, lambda_2 max)``: each penalty alone keeps its part at zero when the other part is zero."""
    X, offsets, _ = _system(design, standardize_scalar)
    p = design.p
    w1 = np.r_[np.ones(p), np.zeros(design.d)]
    w2 = np.r_[np.zeros(p), np.ones(design.d)]
    return (_bcd.block_lambda_max(X, design.y, offsets, w1), _bcd.block_lambda_max(X, design.y, offsets, w2))


@dataclass(frozen=True)
class PFLRFit:
    B: np.ndarray
    Psi: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    support_func: frozenset
    support_scalar: frozenset
    lam1: float
    lam2: float
    sweeps: int
    kkt: float
    converged: bool
    objective_trace: tuple
    standardized: bool
    q: tuple = ()

    def summary(self) -> dict:
        return {"lambda1": self.lam1, "lambda2": self.lam2, "gamma": self.gamma.tolist(),
                "support_func": sorted(self.support_func), "support_scalar": sorted(self.support_scalar),
                "sweeps": self.sweeps, "kkt_residual": self.kkt, "converged": self.converged,
                "objective": self.objective_trace[-1], "standardize_scalar": self.standardized}


def solve_mixed_lasso(design: PFLRDesign, lam1: float, lam2: Optional[float] = None, tol: float = 1e-8,
                      max_sweeps: int = 10000, standardize_scalar: bool = True,
                      B0: Optional[np.ndarray] = None) -> PFLRFit:
    """Minimize ``(2n)^-1 ||y - Omega b - Z gamma||^2 + lam1 sum_j ||b_j|| + lam2 sum_k |gamma_k|``.

    With ``standardize_scalar`` the lasso acts on ``gamma_k * rms(Z_k)``;
    the returned ``gamma`` is always on the original scale.
    """
    lam2 = lam1 if lam2 is None else lam2
    if lam1 < 0 or lam2 < 0:
        raise ValueError("penalties must be nonnegative")
    X, offsets, lips = _system(design, standardize_scalar)
    p, d = design.p, design.d
    lams = np.r_[np.full(p, float(lam1)), np.full(d, float(lam2))]
    res = _bcd.solve(X, design.y, offsets, lams, lips, tol=tol, max_sweeps=max_sweeps, B0=B0)
    coef = res.B[:, 0]
    P = int(design.offsets[-1])
    B = coef[:P]
    Psi = np.zeros(P)
    G = design.es_x.eigenfunctions.shape[2] if design.es_x is not None else 0
    beta = np.zeros((p, G))
    s1 = set()
    for j in range(p):
        lo, hi = design.offsets[j], design.offsets[j + 1]
        Psi[lo:hi] = design.Dinv[j] @ B[lo:hi]
        if np.linalg.norm(Psi[lo:hi]) > SUPPORT_TOL:
            s1.add(j)
        beta[j] = Psi[lo:hi] @ design.es_x.eigenfunctions[j, :hi - lo]
    g = coef[P:].copy()
    if standardize_scalar:
        g = np.where(design.zscale > 0, g / np.where(design.zscale > 0, design.zscale, 1.0), 0.0)
    s2 = {int(k) for k in np.nonzero(g != 0)[0]}
    return PFLRFit(B, Psi, beta, g, frozenset(s1), frozenset(s2), float(lam1), float(lam2), res.sweeps, res.kkt,
                   res.converged, res.objective_trace, standardize_scalar, tuple(int(x) for x in design.q))


def solver_state(design: PFLRDesign, fit: PFLRFit) -> tuple:
    """Columns, response, offsets, penalty vector and coefficients in the solver's coordinates."""
    X, offsets, _ = _system(design, fit.standardized)
    g = fit.gamma * design.zscale if fit.standardized else fit.gamma
    coef = np.r_[fit.B, g][:, None]
    lams = np.r_[np.full(design.p, fit.lam1), np.full(design.d, fit.lam2)]
    return X, design.y[:, None], offsets, lams, coef


def check_re_mixed(design: PFLRDesign, trials: int = 1000, tau1: float = 0.0, tau2: Optional[float] = None,
                   sparsity: int = 3, seed=0) -> dict:
    """Minimum eigenvalue of ``n^-1 S^T S`` and RE margins at random sparse directions."""
    gram = design.gram()
    mu = float(np.linalg.eigvalsh(0.5 * (gram + gram.T))[0]) if gram.size else float("nan")
    tau2 = mu if tau2 is None else float(tau2)
    offsets = np.concatenate([design.offsets, design.offsets[-1] + np.arange(1, design.d + 1)]).astype(np.int64)
    marg = re_margins(gram, offsets, trials, tau1, tau2, sparsity, seed)
    viol = int(np.sum(marg < -1e-10))
    return {"min_eig_proxy": mu, "tolerance_violations": viol, "violation_fraction": viol / max(trials, 1),
            "min_margin": float(marg.min()) if trials else float("nan"), "tau1": float(tau1), "tau2": tau2}


def mixed_score_cov(spec: Union[MixedProcessSpec, LinearProcess], q) -> np.ndarray:
    """Population covariance of ``(zeta_tjl / sqrt(omega_jl))_{l <= q_j}`` stacked with ``Z_t``."""
    lp = as_linear(spec)
    g = lp.group("X")
    p, G = g.nvar, g.dim
    qs = np.broadcast_to(np.asarray(q, dtype=int), (p,))
    vals, vecs = population_eigen(lp, "X")
    S0 = lp.autocov(0)
    ix = np.arange(lp.rows("X").start, lp.rows("X").stop)
    iz = np.arange(lp.rows("Z").start, lp.rows("Z").stop)
    K = int(qs.sum())
    P = np.zeros((ix.size + iz.size, K + iz.size))
    col = 0
    for j in range(p):
        for l in range(qs[j]):
            P[j * G:(j + 1) * G, col] = vecs[j, l] / np.sqrt(max(vals[j, l], 1e-300))
            col += 1
    P[ix.size:, K:] = np.eye(iz.size)
    idx = np.r_[ix, iz]
    C = P.T @ S0[np.ix_(idx, idx)] @ P
    return 0.5 * (C + C.T)


def population_rayleigh_inf_mixed(spec, q) -> float:
    """Population ``mu*`` restricted to the leading ``q`` eigendirections of each functional variable."""
    return float(np.linalg.eigvalsh(mixed_score_cov(spec, q))[0])


def estimation_error_pflr(fit: PFLRFit, truth: Union[RegressionScenario, tuple], q: Optional[int] = None,
                          alpha: Optional[float] = None) -> dict:
    """``l1_func``, ``l1_scalar`` and ``combined = l1_func + q^(alpha/2) l1_scalar`` with support metrics."""
    if isinstance(truth, RegressionScenario):
        beta, gamma = truth.beta, truth.gamma
        alpha = truth.alpha if alpha is None else alpha
    else:
        beta, gamma = truth
    beta, gamma = np.asarray(beta, dtype=float), np.asarray(gamma, dtype=float)
    if fit.beta.shape != beta.shape or fit.gamma.shape != gamma.shape:
        raise ValueError("fit and truth shapes differ")
    if alpha is None:
        raise ValueError("alpha is required")
    q = (max(fit.q) if fit.q else 1) if q is None else int(q)
    l1f = float(np.linalg.norm(fit.beta - beta, axis=1).sum()) if beta.size else 0.0
    l1s = float(np.abs(fit.gamma - gamma).sum())
    S1 = {int(j) for j in np.nonzero(np.linalg.norm(beta, axis=1) > SUPPORT_TOL)[0]} if beta.size else set()
    S2 = {int(k) for k in np.nonzero(gamma != 0)[0]}
    sm1 = {k.replace("support", "func"): v for k, v in support_metrics(set(fit.support_func), S1).items()}
    sm2 = {k.replace("support", "scalar"): v for k, v in support_metrics(set(fit.support_scalar), S2).items()}
    return {"l1_func": l1f, "l1_scalar": l1s, "combined": l1f + q ** (alpha / 2.0) * l1s, **sm1, **sm2}

