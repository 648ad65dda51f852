"""Sparse functional linear lagged regression.

Model: ``Y_t(v) = sum_{h<=L} sum_j int X_{t-h,j}(u) beta_hj(u, v) du + eps_t(v)``.
After FPCA truncation the response scores are regressed on the lagged
covariate scores, each ``(h, j)`` block standardized by ``D_hj``, under a
group lasso penalty on the standardized blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _bcd
from .fpca import EigenSystem, eigendecompose, select_truncation
from .funcspace import BlockKernel, FunctionalPanel
from .procgen import LinearProcess, as_linear, population_eigen

D_RIDGE = 1e-8
SUPPORT_TOL = 1e-8


def _sqrt_pair(S: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root of ``S`` and its inverse with eigenvalues floored at ``ridge * max``."""
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    top = vals.max() if vals.size else 0.0
    if not top > 0:
        raise ValueError("covariate block has zero sample variance")
    v = np.maximum(vals, ridge * top)
    r = np.sqrt(v)
    return (vecs * r) @ vecs.T, (vecs / r) @ vecs.T


@dataclass(frozen=True)
class FLLRDesign:
    """Standardized lagged score design.

    ``Z`` is ``(n-L) x P`` with blocks ordered ``(h, j)`` lag-major; block
    ``b`` occupies columns ``offsets[b]:offsets[b+1]``.  ``Omega = Z D^-1``.
    """

    U: np.ndarray
    Z: np.ndarray
    Omega: np.ndarray
    D: tuple
    Dinv: tuple
    offsets: np.ndarray
    blocks: tuple
    L: int
    q1: np.ndarray
    q2: int
    es_x: EigenSystem
    es_y: EigenSystem

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.es_x.p

    def V(self, h: int, j: int) -> np.ndarray:
        b = self.blocks.index((h, j))
        return self.Z[:, self.offsets[b]:self.offsets[b + 1]]

    def gram(self) -> np.ndarray:
        return self.Omega.T @ self.Omega / self.m


def build_design(panel: FunctionalPanel, L: int, truncation=("fixed", 3), truncation_y=None,
                 ridge: float = D_RIDGE, es_x: Optional[EigenSystem] = None,
                 es_y: Optional[EigenSystem] = None) -> FLLRDesign:
    """FPCA on both sides and the standardized lagged design for rows ``t = L+1..n``."""
    if panel.response is None or panel.response.ndim != 2:
        raise ValueError("panel needs a functional response")
    n = panel.n
    if L < 0 or n <= L:
        raise ValueError(f"need n > L >= 0, got n={n}, L={L}")
    es_x = es_x or eigendecompose(panel)
    es_y = es_y or eigendecompose(panel.functional_response_panel())
    q1 = select_truncation(es_x, truncation)
    q2 = int(select_truncation(es_y, truncation_y or truncation)[0])
    m = n - L
    U = es_y.scores[L:, 0, :q2]
    cols, Ds, Dis, offs, blocks = [], [], [], [0], []
    for h in range(L + 1):
        for j in range(es_x.p):
            V = es_x.scores[L - h:n - h, j, :q1[j]]
            D, Di = _sqrt_pair(V.T @ V / m, ridge)
            cols.append(V)
            Ds.append(D)
            Dis.append(Di)
            offs.append(offs[-1] + q1[j])
            blocks.append((h, j))
    Z = np.hstack(cols)
    Omega = np.hstack([c @ Di for c, Di in zip(cols, Dis)])
    return FLLRDesign(np.ascontiguousarray(U), Z, np.ascontiguousarray(Omega), tuple(Ds), tuple(Dis),
                      np.array(offs, dtype=np.int64), tuple(blocks), L, q1, q2, es_x, es_y)


def lambda_max(design: FLLRDesign) -> float:
    """Smallest penalty at which the all-zero fit is optimal."""
    return _bcd.block_lambda_max(design.Omega, design.U, design.offsets, np.ones(len(design.blocks)))


@dataclass(frozen=True)
class FLLRFit:
    B: np.ndarray
    Psi: np.ndarray
    surfaces: BlockKernel
    support: frozenset
    lam: float
    sweeps: int
    kkt: float
    converged: bool
    objective_trace: tuple

    def summary(self) -> dict:
        return {"lambda": self.lam, "support": sorted([list(s) for s in self.support]), "sweeps": self.sweeps,
                "kkt_residual": self.kkt, "converged": self.converged,
                "objective": self.objective_trace[-1]}


def _assemble(design: FLLRDesign, res: _bcd.SolverResult, lam: float) -> FLLRFit:
    B = res.B
    Psi = np.zeros_like(B)
    G = design.es_x.eigenfunctions.shape[2]
    Fy = design.es_y.eigenfunctions[0, :design.q2]  # (q2, Gy)
    coef = np.zeros((design.L + 1, design.p, G, Fy.shape[1]))
    support = set()
    for b, (h, j) in enumerate(design.blocks):
        lo, hi = design.offsets[b], design.offsets[b + 1]
        Psi[lo:hi] = design.Dinv[b] @ B[lo:hi]
        if np.linalg.norm(Psi[lo:hi]) > SUPPORT_TOL:
            support.add((h, j))
        E = design.es_x.eigenfunctions[j, :hi - lo]  # (q1, G)
        coef[h, j] = E.T @ Psi[lo:hi] @ Fy
    surf = BlockKernel(coef, design.es_x.basis, design.es_y.basis)
    return FLLRFit(B, Psi, surf, frozenset(support), float(lam), res.sweeps, res.kkt, res.converged,
                   res.objective_trace)


def solve_group_lasso(design: FLLRDesign, lam: float, tol: float = 1e-8, max_sweeps: int = 10000,
                      B0: Optional[np.ndarray] = None) -> FLLRFit:
    """Minimize ``(2m)^-1 ||U - Omega B||_F^2 + lam sum_b ||B_b||_F`` by cyclic BCD."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    nb = len(design.blocks)
    res = _bcd.solve(design.Omega, design.U, design.offsets, np.full(nb, float(lam)), np.ones(nb),
                     tol=tol, max_sweeps=max_sweeps, B0=B0)
    return _assemble(design, res, lam)


def fit_path(design: FLLRDesign, lambdas: Sequence[float], tol: float = 1e-8,
             max_sweeps: int = 10000) -> list[FLLRFit]:
    """Warm-started fits along a decreasing grid."""
    lams = [float(x) for x in lambdas]
    if any(b > a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda grid must be nonincreasing")
    fits, B0 = [], None
    for lam in lams:
        f = solve_group_lasso(design, lam, tol, max_sweeps, B0)
        fits.append(f)
        B0 = f.B
    return fits


def lambda_grid(design: FLLRDesign, n_lambda: int = 20, ratio: float = 1e-2) -> np.ndarray:
    lm = lambda_max(design)
    return lm * np.logspace(0.0, np.log10(ratio), n_lambda)


def re_margins(gram: np.ndarray, offsets: np.ndarray, trials: int, tau1: float, tau2: float,
               sparsity: int, rng) -> np.ndarray:
    """``theta^T Gamma theta - tau2 ||theta||^2 + tau1 ||theta||_1^2`` at random unit block-sparse ``theta``."""
    rng = np.random.default_rng(rng)
    nb = offsets.size - 1
    k = min(max(1, sparsity), nb)
    out = np.empty(trials)
    P = gram.shape[0]
    for r in range(trials):
        theta = np.zeros(P)
        for b in rng.choice(nb, size=k, replace=False):
            lo, hi = offsets[b], offsets[b + 1]
            theta[lo:hi] = rng.standard_normal(hi - lo)
        theta /= np.linalg.norm(theta)
        out[r] = theta @ gram @ theta - tau2 + tau1 * np.sum(np.abs(theta)) ** 2
    return out


def check_re_condition(design: FLLRDesign, trials: int = 1000, tau1: float = 0.0, tau2: Optional[float] = None,
                       sparsity: int = 3, seed=0) -> dict:
    """Minimum eigenvalue of the standardized Gram and RE margins along random sparse directions."""
    gram = design.gram()
    mu = float(np.linalg.eigvalsh(0.5 * (gram + gram.T))[0])
    tau2 = mu if tau2 is None else float(tau2)
    marg = re_margins(gram, design.offsets, trials, tau1, tau2, sparsity, seed)
    viol = int(np.sum(marg < -1e-10))
    return {"min_eig_proxy": mu, "tolerance_violations": viol, "violation_fraction": viol / max(trials, 1),
            "min_margin": float(marg.min()) if trials else float("nan"), "tau1": float(tau1), "tau2": tau2}


def population_rayleigh_inf(spec: Union[LinearProcess, object], L: int, q: Union[int, Sequence[int]],
                            group: str = "X") -> float:
    """Population ``mu`` restricted to the leading ``q`` eigendirections of each variable.

    Minimum eigenvalue of the correlation of ``zeta_(t-h)jl / sqrt(omega_jl)``,
    ``h <= L``, ``l <= q_j``, with ``cov(X_(t-h), X_(t-h')) = Sigma_(h-h')``.
    """
    lp = as_linear(spec)
    C = lagged_score_cov(lp, L, q, group)
    return float(np.linalg.eigvalsh(C)[0])


def lagged_score_cov(lp: LinearProcess, L: int, q, group: str = "X") -> np.ndarray:
    g = lp.group(group)
    p, G = g.nvar, g.dim
    qs = np.broadcast_to(np.asarray(q, dtype=int), (p,))
    vals, vecs = population_eigen(lp, group)
    sl = lp.rows(group)
    acov = [lp.autocov(k)[sl, sl] for k in range(L + 1)]

    def S(k):
        return acov[k] if k >= 0 else acov[-k].T

    # projection onto normalized score directions
    P = np.zeros((p * G, int(qs.sum())))
    col = 0
    for j in range(p):
        for l in range(qs[j]):
            P[j * G:(j + 1) * G, col] = vecs[j, l] / np.sqrt(max(vals[j, l], 1e-300))
            col += 1
    K = P.shape[1]
    out = np.zeros(((L + 1) * K, (L + 1) * K))
    for h in range(L + 1):
        for h2 in range(L + 1):
            out[h * K:(h + 1) * K, h2 * K:(h2 + 1) * K] = P.T @ S(h - h2) @ P
    return 0.5 * (out + out.T)


def support_metrics(est: set, truth: set) -> dict:
    tp = len(est & truth)
    prec = tp / len(est) if est else 1.0
    rec = tp / len(truth) if truth else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return {"support_precision": prec, "support_recall": rec, "support_f1": f1}


def estimation_error(fit: Union[FLLRFit, BlockKernel], truth: BlockKernel) -> dict:
    """Functional l1 error ``sum_hj ||beta_hat_hj - beta_hj||_S`` and support metrics."""
    est = fit.surfaces if isinstance(fit, FLLRFit) else fit
    if est.coef.shape != truth.coef.shape:
        raise ValueError(f"surface shapes differ: {est.coef.shape} vs {truth.coef.shape}")
    diff = np.sqrt(np.sum((est.coef - truth.coef) ** 2, axis=(2, 3)))
    S_hat = {tuple(map(int, x)) for x in zip(*np.nonzero(est.hs_norms() > SUPPORT_TOL))}
    S = {tuple(map(int, x)) for x in zip(*np.nonzero(truth.hs_norms() > SUPPORT_TOL))}
    return {"l1_func": float(diff.sum()), **support_metrics(S_hat, S)}
