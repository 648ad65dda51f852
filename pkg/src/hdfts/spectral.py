"""Population spectral density operators and functional stability measures.

For an MA(L) process the spectral density is the trigonometric polynomial
``f_theta = (2 pi)^{-1} sum_{|h| <= L} Sigma_h exp(-i h theta)``.  The
supremum over directions is computed exactly by whitening with the
(ridge-truncated) inverse square root of the marginal covariance(s); the
supremum over frequencies is a max over a uniform grid.  Because
``f_{-theta}`` is the complex conjugate of ``f_theta`` only the
nonnegative half of the grid is evaluated.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Optional, Sequence

import numpy as np

from .procgen import LinearProcess, as_linear

DEFAULT_GRID = 512
DEFAULT_RIDGE = 1e-10
DEFAULT_CAP = 20000
_CHUNK = 64


def theta_grid(grid_size: int = DEFAULT_GRID) -> np.ndarray:
    """``grid_size + 1`` equispaced frequencies on ``[-pi, pi]`` (0 included)."""
    if grid_size < 2 or grid_size % 2:
        raise ValueError(f"grid_size must be an even integer >= 2, got {grid_size}")
    return np.linspace(-np.pi, np.pi, grid_size + 1)


@dataclass(frozen=True)
class SpectralDensity:
    theta: np.ndarray
    values: np.ndarray  # (T+1, N, N) complex

    def integrate(self) -> np.ndarray:
        """Trapezoid rule for ``int f_theta dtheta`` over the grid."""
        trap = getattr(np, "trapezoid", None) or np.trapz
        return trap(self.values, self.theta, axis=0)


def _lag_blocks(lp: LinearProcess, ia: np.ndarray, ib: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``Sigma_h[ia, ib]`` for ``h = -L..L`` and the lag vector."""
    L = lp.order
    acov = [lp.autocov(h) for h in range(L + 1)]
    lags = np.arange(-L, L + 1)
    out = np.empty((2 * L + 1, ia.size, ib.size))
    for i, h in enumerate(lags):
        out[i] = acov[h][np.ix_(ia, ib)] if h >= 0 else acov[-h][np.ix_(ib, ia)].T
    return out, lags


def _rows(lp: LinearProcess, group: str, variables) -> np.ndarray:
    return lp.var_rows(group, variables)


def spectral_density(spec, grid_size: int = DEFAULT_GRID, group: Optional[str] = None) -> SpectralDensity:
    """Spectral density matrices on the full grid (all rows, or one group)."""
    lp = as_linear(spec)
    idx = np.arange(lp.N) if group is None else _rows(lp, group, None)
    S, lags = _lag_blocks(lp, idx, idx)
    th = theta_grid(grid_size)
    ph = np.exp(-1j * np.outer(th, lags))
    vals = np.einsum("th,hab->tab", ph, S) / (2.0 * np.pi)
    return SpectralDensity(th, vals)


def _whitener(S: np.ndarray, ridge: float) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    top = vals.max() if vals.size else 0.0
    if not top > 1e-300:
        raise ValueError("marginal covariance is numerically zero")
    keep = vals > ridge * top
    return vecs[:, keep] / np.sqrt(vals[keep])


def _grid_sup(C: np.ndarray, lags: np.ndarray, grid_size: int, hermitian: bool) -> float:
    """``max_theta`` of the largest eigenvalue (hermitian) or singular value of ``sum_h C_h e^{-ih theta}``."""
    th = theta_grid(grid_size)
    th = th[th >= -1e-15]
    best = 0.0 if not hermitian else -np.inf
    for s in range(0, th.size, _CHUNK):
        ph = np.exp(-1j * np.outer(th[s:s + _CHUNK], lags))
        F = np.einsum("th,hab->tab", ph, C)
        if hermitian:
            F = 0.5 * (F + np.conj(np.swapaxes(F, 1, 2)))
            v = np.linalg.eigvalsh(F)[:, -1].max()
        else:
            v = np.linalg.norm(F, 2, axis=(1, 2)).max() if F.size else 0.0
        best = max(best, float(v))
    return best


def stability_measure(spec, grid_size: int = DEFAULT_GRID, ridge: float = DEFAULT_RIDGE,
                      group: str = "X", variables: Optional[Sequence[int]] = None) -> float:
    """``2 pi sup_theta sup_Phi <Phi, f_theta Phi> / <Phi, Sigma_0 Phi>`` for (a subset of) one group.

    ``ridge`` is relative: directions of ``Sigma_0`` with eigenvalue at most
    ``ridge * lambda_max`` are excluded.
    """
    lp = as_linear(spec)
    ia = _rows(lp, group, variables)
    S, lags = _lag_blocks(lp, ia, ia)
    W = _whitener(S[lp.order], ridge)
    C = np.einsum("ar,hab,bs->hrs", W, S, W)
    return _grid_sup(C, lags, grid_size, hermitian=True)


def cross_stability(spec, a: str = "X", b: str = "Y", grid_size: int = DEFAULT_GRID,
                    ridge: float = DEFAULT_RIDGE, vars_a: Optional[Sequence[int]] = None,
                    vars_b: Optional[Sequence[int]] = None) -> float:
    """``2 pi sup |<Phi1, f^{a,b}_theta Phi2>| / sqrt(<Phi1,Sigma^a Phi1><Phi2,Sigma^b Phi2>)``."""
    lp = as_linear(spec)
    ia, ib = _rows(lp, a, vars_a), _rows(lp, b, vars_b)
    Saa, lags = _lag_blocks(lp, ia, ia)
    Sbb, _ = _lag_blocks(lp, ib, ib)
    Sab, _ = _lag_blocks(lp, ia, ib)
    L = lp.order
    Wa, Wb = _whitener(Saa[L], ridge), _whitener(Sbb[L], ridge)
    C = np.einsum("ar,hab,bs->hrs", Wa, Sab, Wb)
    if not np.any(C):
        return 0.0
    return _grid_sup(C, lags, grid_size, hermitian=False)


def sparse_stability(spec, k, grid_size: int = DEFAULT_GRID, ridge: float = DEFAULT_RIDGE,
                     group: str = "X", cross_group: Optional[str] = None, cap: int = DEFAULT_CAP) -> float:
    """Max of the restricted measure over all variable subsets of size ``k`` (or ``(k1, k2)`` for a cross pair)."""
    lp = as_linear(spec)
    pa = lp.group(group).nvar
    if cross_group is None:
        kk = int(k)
        if not 1 <= kk <= pa:
            raise ValueError(f"k must lie in [1, {pa}]")
        if comb(pa, kk) > cap:
            raise ValueError(f"C({pa},{kk}) = {comb(pa, kk)} subsets exceeds cap {cap}")
        return max(stability_measure(lp, grid_size, ridge, group, J) for J in combinations(range(pa), kk))
    k1, k2 = k
    pb = lp.group(cross_group).nvar
    if not (1 <= k1 <= pa and 1 <= k2 <= pb):
        raise ValueError("subset sizes out of range")
    if comb(pa, k1) * comb(pb, k2) > cap:
        raise ValueError(f"{comb(pa, k1) * comb(pb, k2)} subset pairs exceeds cap {cap}")
    return max(cross_stability(lp, group, cross_group, grid_size, ridge, J, K)
               for J in combinations(range(pa), k1) for K in combinations(range(pb), k2))


def basu_measure(spec, a: str = "X", b: str = "Z", grid_size: int = DEFAULT_GRID) -> float:
    """``2 pi sup_theta sigma_max(f^{a,b}_theta)`` (no whitening)."""
    lp = as_linear(spec)
    ia, ib = _rows(lp, a, None), _rows(lp, b, None)
    Sab, lags = _lag_blocks(lp, ia, ib)
    return _grid_sup(Sab, lags, grid_size, hermitian=False)


def real_cross_measure(spec, a: str = "X", b: str = "Z", grid_size: int = DEFAULT_GRID, n_phase: int = 180) -> float:
    """``2 pi sup |nu1^T f^{a,b}_theta nu2| / (||nu1|| ||nu2||)`` over real unit vectors.

    For complex ``F`` this equals ``max_phi sigma_max(Re(e^{-i phi} F))``;
    the phase is searched on a grid of ``n_phase`` values in ``[0, pi)``, so
    the result is a lower bound that converges as ``n_phase`` grows.
    """
    lp = as_linear(spec)
    ia, ib = _rows(lp, a, None), _rows(lp, b, None)
    Sab, lags = _lag_blocks(lp, ia, ib)
    th = theta_grid(grid_size)
    th = th[th >= -1e-15]
    phases = np.exp(-1j * np.linspace(0.0, np.pi, n_phase, endpoint=False))
    best = 0.0
    for s in range(0, th.size, _CHUNK):
        ph = np.exp(-1j * np.outer(th[s:s + _CHUNK], lags))
        F = np.einsum("th,hab->tab", ph, Sab)
        R = np.real(phases[:, None, None, None] * F[None])
        best = max(best, float(np.linalg.norm(R, 2, axis=(2, 3)).max()))
    return best


@dataclass
class StabilityReport:
    M_X: float
    M_Y: Optional[float] = None
    M_Z: Optional[float] = None
    M_XY: Optional[float] = None
    M_XZ: Optional[float] = None
    M_tilde: Optional[float] = None
    sparse: dict = field(default_factory=dict)
    grid_size: int = DEFAULT_GRID
    ridge: float = DEFAULT_RIDGE

    def rows(self) -> list[tuple]:
        out = []
        for name in ("M_X", "M_Y", "M_Z", "M_XY", "M_XZ", "M_tilde"):
            v = getattr(self, name)
            if v is not None:
                out.append((name, "", v))
        for key in sorted(self.sparse):
            name, k = key.split(":", 1)
            out.append((name, k, self.sparse[key]))
        return out

    def to_dict(self) -> dict:
        return {"M_X": self.M_X, "M_Y": self.M_Y, "M_Z": self.M_Z, "M_XY": self.M_XY, "M_XZ": self.M_XZ,
                "M_tilde": self.M_tilde, "sparse": dict(sorted(self.sparse.items())),
                "grid_size": self.grid_size, "ridge": self.ridge}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["measure", "k", "value", "grid_size", "ridge"])
        for name, k, v in self.rows():
            w.writerow([name, k, repr(float(v)), self.grid_size, repr(float(self.ridge))])
        return buf.getvalue()


def stability_report(spec, grid_size: int = DEFAULT_GRID, ridge: float = DEFAULT_RIDGE,
                     sparse_k: Sequence[int] = (), cap: int = DEFAULT_CAP) -> StabilityReport:
    """All measures available for the groups present (``X`` and optionally ``Y``, ``Z``)."""
    lp = as_linear(spec)
    names = {g.name for g in lp.groups}
    rep = StabilityReport(stability_measure(lp, grid_size, ridge, "X"), grid_size=grid_size, ridge=ridge)
    if "Y" in names:
        rep.M_Y = stability_measure(lp, grid_size, ridge, "Y")
        rep.M_XY = cross_stability(lp, "X", "Y", grid_size, ridge)
    if "Z" in names:
        rep.M_Z = stability_measure(lp, grid_size, ridge, "Z")
        rep.M_XZ = cross_stability(lp, "X", "Z", grid_size, ridge)
        rep.M_tilde = basu_measure(lp, "X", "Z", grid_size)
    elif "Y" in names:
        rep.M_tilde = basu_measure(lp, "X", "Y", grid_size)
    for k in sparse_k:
        rep.sparse[f"M_X_k:{int(k)}"] = sparse_stability(lp, int(k), grid_size, ridge, "X", cap=cap)
    return rep
