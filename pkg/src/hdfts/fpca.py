"""Sample (cross-)autocovariances, per-variable FPCA and score statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .funcspace import BasisSpec, BlockKernel, FunctionalPanel, SCALAR_BASIS

EIG_FLOOR = 1e-12


def sym_eigen(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenpairs of a symmetric matrix; rows of the second output are eigenvectors.

    Each eigenvector is signed so its largest-magnitude entry is positive
    (first such entry on ties).  Negative round-off eigenvalues are clipped to 0.
    """
    S = np.asarray(S, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T.copy()
    for i in range(vecs.shape[0]):
        k = int(np.argmax(np.abs(vecs[i])))
        if vecs[i, k] < 0:
            vecs[i] = -vecs[i]
    return vals, vecs


def _coef_array(x) -> np.ndarray:
    if isinstance(x, FunctionalPanel):
        return x.data
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None, None]
    elif a.ndim == 2:
        a = a[:, :, None]
    return a


@dataclass(frozen=True)
class CovEstimate:
    lag: int
    kernel: BlockKernel
    kind: Literal["auto", "cross", "mixed"] = "auto"


def _lagged_cross(A: np.ndarray, B: np.ndarray, h: int) -> np.ndarray:
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError("series lengths differ")
    if not 0 <= h < n:
        raise ValueError(f"lag h={h} must satisfy 0 <= h < n={n}")
    Af = A.reshape(n, -1)[: n - h]
    Bf = B.reshape(n, -1)[h:]
    return Af.T @ Bf / (n - h)


def sample_autocov(panel, h: int = 0) -> CovEstimate:
    """``(n-h)^{-1} sum_t X_t (x) X_{t+h}`` in coefficient space."""
    X = _coef_array(panel)
    basis = panel.basis if isinstance(panel, FunctionalPanel) else BasisSpec(G=X.shape[2])
    M = _lagged_cross(X, X, h)
    p = X.shape[1]
    return CovEstimate(h, BlockKernel.from_matrix(M, p, p, basis), "auto")


def sample_cross_cov(panel, h: int, target) -> CovEstimate:
    """``(n-h)^{-1} sum_t X_t (x) T_{t+h}`` for a functional (``(n, d, Gy)``) or scalar (``(n, d)``) target."""
    X = _coef_array(panel)
    basis = panel.basis if isinstance(panel, FunctionalPanel) else BasisSpec(G=X.shape[2])
    scalar = not isinstance(target, FunctionalPanel) and np.asarray(target).ndim <= 2
    if isinstance(target, FunctionalPanel):
        T, bt = target.data, target.basis
    else:
        T = _coef_array(target)
        bt = SCALAR_BASIS if scalar else BasisSpec(G=T.shape[2])
    M = _lagged_cross(X, T, h)
    return CovEstimate(h, BlockKernel.from_matrix(M, X.shape[1], T.shape[1], basis, bt), "mixed" if scalar else "cross")


@dataclass(frozen=True)
class EigenSystem:
    """Per-variable sample FPCA.

    ``eigenfunctions[j, l]`` holds the coefficients of the l-th eigenfunction
    of variable j; ``scores[t, j, l] = <X_tj, psi_jl>``.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    scores: np.ndarray
    basis: BasisSpec
    q: np.ndarray

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def with_truncation(self, q) -> "EigenSystem":
        q = np.broadcast_to(np.asarray(q, dtype=int), (self.p,)).copy()
        return EigenSystem(self.eigenvalues, self.eigenfunctions, self.scores, self.basis, q)

    def aligned_to(self, reference: np.ndarray) -> "EigenSystem":
        """Flip eigenfunction signs so that ``<psi_hat_jl, psi_jl> >= 0`` for a reference set."""
        s = np.sign(np.einsum("jlg,jlg->jl", self.eigenfunctions, reference))
        s[s == 0] = 1.0
        return EigenSystem(self.eigenvalues, self.eigenfunctions * s[:, :, None], self.scores * s[None], self.basis, self.q)

    def reconstruct(self, j: int, q: Optional[int] = None) -> np.ndarray:
        q = self.eigenvalues.shape[1] if q is None else q
        return self.scores[:, j, :q] @ self.eigenfunctions[j, :q]

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "eigenvalues": self.eigenvalues.tolist(),
                "eigenfunctions": self.eigenfunctions.tolist(), "q": self.q.tolist()}


def eigendecompose(panel) -> EigenSystem:
    """Eigenanalysis of each ``Sigma_hat_0,jj = n^{-1} sum_t X_tj (x) X_tj``."""
    X = _coef_array(panel)
    basis = panel.basis if isinstance(panel, FunctionalPanel) else BasisSpec(G=X.shape[2])
    n, p, G = X.shape
    vals = np.zeros((p, G))
    vecs = np.zeros((p, G, G))
    scores = np.zeros((n, p, G))
    for j in range(p):
        S = X[:, j].T @ X[:, j] / n
        vals[j], vecs[j] = sym_eigen(S)
        scores[:, j] = X[:, j] @ vecs[j].T
    return EigenSystem(vals, vecs, scores, basis, np.full(p, G))


def select_truncation(es: EigenSystem, rule: Union[tuple, dict]) -> np.ndarray:
    """Per-variable truncation levels.

    ``rule`` is ``('fve', rho)`` (smallest q with cumulative eigenvalue share
    >= rho) or ``('fixed', q)``; the dict form ``{'fve': rho}`` also works.
    """
    if isinstance(rule, dict):
        if len(rule) != 1:
            raise ValueError(f"truncation rule must have exactly one key, got {rule}")
        rule = next(iter(rule.items()))
    kind, val = rule
    G = es.eigenvalues.shape[1]
    if kind == "fixed":
        q = int(val)
        if q < 1:
            raise ValueError("fixed truncation needs q >= 1")
        return np.full(es.p, min(q, G))
    if kind == "fve":
        rho = float(val)
        if not 0.0 < rho <= 1.0:
            raise ValueError(f"fve threshold must lie in (0, 1], got {rho}")
        out = np.zeros(es.p, dtype=int)
        for j in range(es.p):
            w = es.eigenvalues[j]
            tot = w.sum()
            if tot <= 0:
                out[j] = 1
                continue
            share = np.cumsum(w) / tot
            out[j] = int(np.searchsorted(share, rho - 1e-12) + 1)
        return np.minimum(out, G)
    raise ValueError(f"unknown truncation rule {kind!r}")


@dataclass(frozen=True)
class ScoreStatistic:
    """Sample score cross-covariances and, if truth is known, the normalized max deviation."""

    kind: str
    lag: int
    values: np.ndarray
    stat: Optional[float] = None


def _lag_scores(A: np.ndarray, B: np.ndarray, h: int) -> np.ndarray:
    n = A.shape[0]
    if not 0 <= h < n:
        raise ValueError(f"lag h={h} must satisfy 0 <= h < n={n}")
    return np.einsum("ta,tb->ab", A[: n - h], B[h:]) / (n - h)


def score_cross_cov(es_x: EigenSystem, other, h: int = 0, *,
                    kind: Literal["xy", "xz", "xe", "xe_scalar"] = "xy",
                    es_y: Optional[EigenSystem] = None,
                    truth: Optional[np.ndarray] = None,
                    omega_x: Optional[np.ndarray] = None, omega_y: Optional[np.ndarray] = None,
                    alpha: tuple = (2.0, 2.0), M1: Optional[int] = None, M2: Optional[int] = None,
                    normalize: bool = True) -> ScoreStatistic:
    """Cross-covariances of estimated FPC scores with a second series.

    kind
        ``'xy'``: ``other`` is the EigenSystem of Y; values ``[j, l, k, m]``.
        ``'xz'``: ``other`` is an ``(n, d)`` scalar series; values ``[j, l, k]``.
        ``'xe'``: ``other`` is an ``(n, d, Gy)`` functional error panel projected
        on the eigenfunctions of ``es_y``; values ``[j, l, k, m]``, truth 0.
        ``'xe_scalar'``: ``other`` is an ``(n,)`` scalar error; values ``[j, l]``, truth 0.

    The normalized statistic divides ``|hat - truth|`` by
    ``(l^(a1+1) v m^(a2+1)) sqrt(w_jl w_km)`` (xy), ``l^(a1+1) sqrt(w_jl)`` (xz),
    ``(l^a1 v m^a2) sqrt(w_jl w_km)`` (xe) or ``sqrt(w_jl)`` (xe_scalar), using
    the supplied true eigenvalues, each floored at 1e-12.
    """
    a1, a2 = alpha
    G = es_x.eigenvalues.shape[1]
    M1 = G if M1 is None else M1
    zx = es_x.scores[:, :, :M1]
    n, p, _ = zx.shape
    A = zx.reshape(n, -1)
    l = np.arange(1, M1 + 1, dtype=float)

    if kind in ("xy", "xe"):
        if kind == "xy":
            ey = other
        else:
            if es_y is None:
                raise ValueError("'xe' needs es_y for the response eigenfunctions")
            ey = es_y
        Gy = ey.eigenvalues.shape[1]
        M2 = Gy if M2 is None else M2
        if kind == "xy":
            zy = ey.scores[:, :, :M2]
        else:
            E = np.asarray(other, dtype=float)
            if E.ndim == 2:
                E = E[:, None, :]
            zy = np.einsum("tkg,kmg->tkm", E, ey.eigenfunctions[:, :M2])
        d = zy.shape[1]
        vals = _lag_scores(A, zy.reshape(n, -1), h).reshape(p, M1, d, M2)
        m = np.arange(1, M2 + 1, dtype=float)
        if kind == "xy":
            w = np.maximum(l[:, None] ** (a1 + 1), m[None, :] ** (a2 + 1))
        else:
            w = np.maximum(l[:, None] ** a1, m[None, :] ** a2)
        weight_shape = (p, M1, d, M2)
    elif kind == "xz":
        Z = np.asarray(other, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        d = Z.shape[1]
        vals = _lag_scores(A, Z, h).reshape(p, M1, d)
        w = l ** (a1 + 1)
        weight_shape = (p, M1, d)
    elif kind == "xe_scalar":
        e = np.asarray(other, dtype=float).reshape(n, -1)
        vals = _lag_scores(A, e[:, :1], h).reshape(p, M1)
        w = np.ones(M1)
        weight_shape = (p, M1)
    else:
        raise ValueError(f"unknown score statistic kind {kind!r}")

    if not normalize:
        return ScoreStatistic(kind, h, vals)
    if kind in ("xy", "xz") and truth is None:
        raise ValueError(f"normalized '{kind}' statistic requires the population truth")
    if omega_x is None or (kind in ("xy", "xe") and omega_y is None):
        raise ValueError("normalized statistic requires the true eigenvalues")
    tr = np.zeros(weight_shape) if truth is None else np.asarray(truth, dtype=float)
    if tr.shape != weight_shape:
        raise ValueError(f"truth shape {tr.shape} != {weight_shape}")
    ox = np.maximum(np.asarray(omega_x, dtype=float)[:, :M1], EIG_FLOOR)
    if kind in ("xy", "xe"):
        oy = np.maximum(np.asarray(omega_y, dtype=float)[:, :M2], EIG_FLOOR)
        den = w[None, :, None, :] * np.sqrt(ox[:, :, None, None] * oy[None, None, :, :])
    elif kind == "xz":
        den = (w[None, :] * np.sqrt(ox))[:, :, None]
    else:
        den = np.sqrt(ox)
    stat = float(np.max(np.abs(vals - tr) / den)) if vals.size else 0.0
    return ScoreStatistic(kind, h, vals, stat)


def population_score_cov(autocov_xy: np.ndarray, psi: np.ndarray, phi: Optional[np.ndarray], M1: int,
                         M2: Optional[int] = None) -> np.ndarray:
    """Population ``cov(zeta_tjl, xi_(t+h)km) = psi_jl^T Sigma_h,jk phi_km`` from a flat cross-covariance.

    ``autocov_xy`` is ``(p G) x (d Gy)``; ``phi=None`` means a scalar target (``Gy = 1``).
    """
    p, _, G = psi.shape
    if phi is None:
        d = autocov_xy.shape[1]
        S = autocov_xy.reshape(p, G, d)
        return np.einsum("jlg,jgk->jlk", psi[:, :M1], S)
    d, _, Gy = phi.shape
    S = autocov_xy.reshape(p, G, d, Gy)
    return np.einsum("jlg,jgkh,kmh->jlkm", psi[:, :M1], S, phi[:, :M2])
