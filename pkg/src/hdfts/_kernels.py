"""Hot loops for block coordinate descent.

Both the numba and the pure-numpy versions implement one cyclic sweep of
the proximal block update

    g   = B_b + X_b^T R / (m L_b)
    B_b = max(0, 1 - lam_b / (L_b ||g||_F)) g

where ``L_b`` bounds the largest eigenvalue of ``X_b^T X_b / m``.  For an
orthonormalised block (``L_b = 1``) or a single column (``L_b`` its scaled
squared norm) the update is the exact block minimiser.  ``R`` and ``B``
are updated in place.  Set ``HDFTS_DISABLE_NUMBA=1`` to force the numpy
path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

DISABLED = os.environ.get("HDFTS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


def bcd_sweep_numpy(X, R, B, offsets, lams, lips, inv_m):
    max_change = 0.0
    for b in range(offsets.size - 1):
        lo, hi = offsets[b], offsets[b + 1]
        Lb = lips[b]
        if Lb <= 0.0:
            continue
        Xb = X[:, lo:hi]
        old = B[lo:hi].copy()
        g = old + (Xb.T @ R) * (inv_m / Lb)
        nrm = np.sqrt(np.sum(g * g))
        thr = lams[b] / Lb
        if nrm > thr:
            new = (1.0 - thr / nrm) * g
        else:
            new = np.zeros_like(g)
        delta = new - old
        ch = np.max(np.abs(delta)) if delta.size else 0.0
        if ch > 0.0:
            R -= Xb @ delta
            B[lo:hi] = new
            max_change = max(max_change, ch)
    return max_change


def _bcd_sweep_loops(X, R, B, offsets, lams, lips, inv_m):
    m = X.shape[0]
    Q = R.shape[1]
    max_change = 0.0
    for b in range(offsets.size - 1):
        lo = offsets[b]
        hi = offsets[b + 1]
        Lb = lips[b]
        if Lb <= 0.0:
            continue
        w = hi - lo
        g = np.empty((w, Q))
        for a in range(w):
            for c in range(Q):
                s = 0.0
                for t in range(m):
                    s += X[t, lo + a] * R[t, c]
                g[a, c] = B[lo + a, c] + s * inv_m / Lb
        nrm = 0.0
        for a in range(w):
            for c in range(Q):
                nrm += g[a, c] * g[a, c]
        nrm = np.sqrt(nrm)
        thr = lams[b] / Lb
        shrink = 1.0 - thr / nrm if nrm > thr else 0.0
        ch = 0.0
        delta = np.empty((w, Q))
        for a in range(w):
            for c in range(Q):
                dv = shrink * g[a, c] - B[lo + a, c]
                delta[a, c] = dv
                if abs(dv) > ch:
                    ch = abs(dv)
        if ch > 0.0:
            for t in range(m):
                for c in range(Q):
                    s = 0.0
                    for a in range(w):
                        s += X[t, lo + a] * delta[a, c]
                    R[t, c] -= s
            for a in range(w):
                for c in range(Q):
                    B[lo + a, c] = shrink * g[a, c]
            if ch > max_change:
                max_change = ch
    return max_change


if njit is not None and not DISABLED:
    bcd_sweep_numba = njit(cache=True)(_bcd_sweep_loops)
    USING_NUMBA = True
else:
    bcd_sweep_numba = None
    USING_NUMBA = False


def bcd_sweep(X, R, B, offsets, lams, lips, inv_m):
    """One cyclic sweep; returns the largest absolute coefficient change."""
    if USING_NUMBA:
        return bcd_sweep_numba(X, R, B, offsets, lams, lips, inv_m)
    return bcd_sweep_numpy(X, R, B, offsets, lams, lips, inv_m)
