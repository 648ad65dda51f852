"""Finite orthonormal-basis representation of curves, kernels and panels.

Every function on the domain is stored by its coefficients in one fixed
orthonormal basis of dimension ``G``.  Inner products, integral operators
and Hilbert--Schmidt norms therefore reduce to plain linear algebra on the
coefficient arrays; point evaluation is only needed for export and for
quadrature checks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from numpy.polynomial import legendre as _leg

Family = Literal["fourier", "legendre"]

DEFAULT_G = 15


@dataclass(frozen=True)
class BasisSpec:
    """Orthonormal basis descriptor.

    Parameters
    ----------
    G : int
        Basis dimension.
    domain : tuple of float
        Compact interval ``(a, b)``.
    family : {'fourier', 'legendre'}
        Only used by :meth:`evaluate`.
    """

    G: int = DEFAULT_G
    domain: tuple[float, float] = (0.0, 1.0)
    family: Family = "fourier"

    def __post_init__(self):
        if int(self.G) != self.G or self.G < 1:
            raise ValueError(f"basis dimension G must be a positive integer, got {self.G}")
        a, b = self.domain
        if not b > a:
            raise ValueError(f"domain must satisfy a < b, got {self.domain}")
        if self.family not in ("fourier", "legendre"):
            raise ValueError(f"unknown basis family {self.family!r}")
        object.__setattr__(self, "G", int(self.G))
        object.__setattr__(self, "domain", (float(a), float(b)))

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def evaluate(self, x) -> np.ndarray:
        """Basis functions at points ``x``; returns an ``(len(x), G)`` array."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a, _ = self.domain
        L = self.length
        out = np.empty((x.size, self.G))
        if self.family == "fourier":
            s = (x - a) / L
            out[:, 0] = 1.0 / np.sqrt(L)
            for i in range(1, self.G):
                k = (i + 1) // 2
                trig = np.cos if i % 2 == 1 else np.sin
                out[:, i] = np.sqrt(2.0 / L) * trig(2.0 * np.pi * k * s)
        else:
            s = 2.0 * (x - a) / L - 1.0
            for i in range(self.G):
                c = np.zeros(i + 1)
                c[i] = 1.0
                out[:, i] = np.sqrt((2 * i + 1) / L) * _leg.legval(s, c)
        return out

    def to_dict(self) -> dict:
        return {"G": self.G, "domain": list(self.domain), "family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(G=int(d["G"]), domain=tuple(d.get("domain", (0.0, 1.0))), family=d.get("family", "fourier"))


SCALAR_BASIS = BasisSpec(G=1)


def _check_same_basis(b1: BasisSpec, b2: BasisSpec):
    if b1.G != b2.G:
        raise ValueError(f"dimension mismatch: G={b1.G} vs G={b2.G}")


@dataclass(frozen=True)
class Curve:
    """A function given by its coefficient vector."""

    coef: np.ndarray
    basis: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float).reshape(-1)
        if coef.size != self.basis.G:
            raise ValueError(f"curve has {coef.size} coefficients but basis has G={self.basis.G}")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coef))

    def __call__(self, x) -> np.ndarray:
        return self.basis.evaluate(x) @ self.coef

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Curve":
        return cls(np.asarray(d["coef"]), BasisSpec.from_dict(d["basis"]))


@dataclass(frozen=True)
class OperatorKernel:
    """Integral kernel ``K(u, v)``; rows index the u-argument, columns the v-argument."""

    coef: np.ndarray
    basis_u: BasisSpec = field(default_factory=BasisSpec)
    basis_v: Optional[BasisSpec] = None

    def __post_init__(self):
        bv = self.basis_v if self.basis_v is not None else self.basis_u
        object.__setattr__(self, "basis_v", bv)
        coef = np.array(self.coef, dtype=float)
        if coef.shape != (self.basis_u.G, bv.G):
            raise ValueError(f"kernel coefficient shape {coef.shape} does not match ({self.basis_u.G}, {bv.G})")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.coef))

    @property
    def T(self) -> "OperatorKernel":
        return OperatorKernel(self.coef.T, self.basis_v, self.basis_u)

    def __call__(self, u, v) -> np.ndarray:
        return self.basis_u.evaluate(u) @ self.coef @ self.basis_v.evaluate(v).T

    def to_dict(self) -> dict:
        return {"basis_u": self.basis_u.to_dict(), "basis_v": self.basis_v.to_dict(), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorKernel":
        return cls(np.asarray(d["coef"]), BasisSpec.from_dict(d["basis_u"]), BasisSpec.from_dict(d["basis_v"]))


def inner_product(f: Curve, g: Curve) -> float:
    """``<f, g>`` as the coefficient dot product (Parseval)."""
    _check_same_basis(f.basis, g.basis)
    return float(f.coef @ g.coef)


def kernel_apply(K: OperatorKernel, f: Curve) -> Curve:
    """``(Kf)(u) = int K(u, v) f(v) dv``."""
    _check_same_basis(K.basis_v, f.basis)
    return Curve(K.coef @ f.coef, K.basis_u)


@dataclass(frozen=True)
class BlockKernel:
    """A ``p x q`` grid of kernels stored as one ``(p, q, Gu, Gv)`` array.

    Curve-valued entries (functional-by-scalar cross covariances) use
    ``Gv = 1``, in which case the HS norm of an entry is its L2 norm.
    """

    coef: np.ndarray
    basis_u: BasisSpec = field(default_factory=BasisSpec)
    basis_v: Optional[BasisSpec] = None

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        if coef.ndim != 4:
            raise ValueError(f"block kernel needs a 4-d coefficient array, got shape {coef.shape}")
        bv = self.basis_v
        if bv is None:
            bv = self.basis_u if coef.shape[3] == self.basis_u.G else BasisSpec(G=coef.shape[3])
            object.__setattr__(self, "basis_v", bv)
        if coef.shape[2] != self.basis_u.G or coef.shape[3] != bv.G:
            raise ValueError(f"block shape {coef.shape[2:]} does not match bases ({self.basis_u.G}, {bv.G})")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coef.shape[0], self.coef.shape[1]

    def block(self, i: int, j: int) -> OperatorKernel:
        return OperatorKernel(self.coef[i, j], self.basis_u, self.basis_v)

    def hs_norms(self) -> np.ndarray:
        """``p x q`` matrix of per-block HS norms."""
        return np.sqrt(np.einsum("ijkl,ijkl->ij", self.coef, self.coef))

    def to_matrix(self) -> np.ndarray:
        """Flat ``(p Gu) x (q Gv)`` coefficient matrix of the operator."""
        p, q, gu, gv = self.coef.shape
        return self.coef.transpose(0, 2, 1, 3).reshape(p * gu, q * gv)

    @classmethod
    def from_matrix(cls, M, p: int, q: int, basis_u: BasisSpec, basis_v: Optional[BasisSpec] = None) -> "BlockKernel":
        bv = basis_v if basis_v is not None else basis_u
        M = np.asarray(M, dtype=float)
        coef = M.reshape(p, basis_u.G, q, bv.G).transpose(0, 2, 1, 3)
        return cls(coef, basis_u, bv)

    @property
    def T(self) -> "BlockKernel":
        """Adjoint operator: blocks swapped and each block transposed."""
        return BlockKernel(self.coef.transpose(1, 0, 3, 2), self.basis_v, self.basis_u)

    def apply(self, F: np.ndarray) -> np.ndarray:
        """Apply to a ``(q, Gv)`` array of curve coefficients."""
        return np.einsum("ijkl,jl->ik", self.coef, np.asarray(F, dtype=float))

    def to_dict(self) -> dict:
        return {"basis_u": self.basis_u.to_dict(), "basis_v": self.basis_v.to_dict(),
                "shape": list(self.coef.shape), "coef": self.coef.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockKernel":
        coef = np.asarray(d["coef"], dtype=float).reshape(d["shape"])
        return cls(coef, BasisSpec.from_dict(d["basis_u"]), BasisSpec.from_dict(d["basis_v"]))

    def to_csv(self) -> str:
        """Rows ``i, j, row, col, value`` in row-major order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "row", "col", "value"])
        p, q, gu, gv = self.coef.shape
        for idx in np.ndindex(p, q, gu, gv):
            w.writerow([*idx, repr(float(self.coef[idx]))])
        return buf.getvalue()


def zeros_block(p: int, q: int, basis_u: BasisSpec, basis_v: Optional[BasisSpec] = None) -> BlockKernel:
    bv = basis_v if basis_v is not None else basis_u
    return BlockKernel(np.zeros((p, q, basis_u.G, bv.G)), basis_u, bv)


def block_norms(B: BlockKernel) -> dict[str, float]:
    """Functional Frobenius, elementwise max, matrix l1 and matrix l-inf norms."""
    hs = B.hs_norms()
    if hs.size == 0:
        return {"F": 0.0, "max": 0.0, "one": 0.0, "inf": 0.0}
    return {
        "F": float(np.sqrt(np.sum(hs**2))),
        "max": float(hs.max()),
        "one": float(hs.sum(axis=0).max()),
        "inf": float(hs.sum(axis=1).max()),
    }


@dataclass(frozen=True)
class FunctionalPanel:
    """``n`` observations of a ``p``-variate curve series plus optional companions.

    Attributes
    ----------
    data : ndarray, shape (n, p, G)
        Basis coefficients of ``X_tj``.
    scalar : ndarray, shape (n, d), optional
        Scalar companion series ``Z_t``.
    response : ndarray, optional
        Scalar response, shape ``(n,)``, or functional response, shape ``(n, Gy)``.
    """

    data: np.ndarray
    basis: BasisSpec = field(default_factory=BasisSpec)
    scalar: Optional[np.ndarray] = None
    response: Optional[np.ndarray] = None
    response_basis: Optional[BasisSpec] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError(f"panel data must be (n, p, G), got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("panel needs n >= 1 observations")
        if data.shape[2] != self.basis.G:
            raise ValueError(f"panel has {data.shape[2]} coefficients per curve, basis has G={self.basis.G}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        n = data.shape[0]
        if self.scalar is not None:
            z = np.array(self.scalar, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[0] != n:
                raise ValueError("scalar companion length differs from panel length")
            z.setflags(write=False)
            object.__setattr__(self, "scalar", z)
        if self.response is not None:
            y = np.array(self.response, dtype=float)
            if y.shape[0] != n or y.ndim > 2:
                raise ValueError(f"response shape {y.shape} incompatible with n={n}")
            y.setflags(write=False)
            object.__setattr__(self, "response", y)
            if y.ndim == 2 and self.response_basis is None:
                object.__setattr__(self, "response_basis", self.basis if y.shape[1] == self.basis.G else BasisSpec(G=y.shape[1]))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return 0 if self.scalar is None else self.scalar.shape[1]

    def curve(self, t: int, j: int) -> Curve:
        return Curve(self.data[t, j], self.basis)

    def functional_response_panel(self) -> "FunctionalPanel":
        """The functional response as a one-variable panel."""
        if self.response is None or self.response.ndim != 2:
            raise ValueError("panel has no functional response")
        return FunctionalPanel(self.response[:, None, :], self.response_basis)

    def reversed(self) -> "FunctionalPanel":
        return FunctionalPanel(self.data[::-1], self.basis,
                               None if self.scalar is None else self.scalar[::-1],
                               None if self.response is None else self.response[::-1],
                               self.response_basis)


def coef_rows_csv(arr: np.ndarray, header: list[str]) -> str:
    """Long-format CSV of an n-d array: one row per entry, index columns then value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for idx in np.ndindex(*arr.shape):
        w.writerow([*idx, repr(float(arr[idx]))])
    return buf.getvalue()


def panel_to_csv(panel: FunctionalPanel) -> str:
    """CSV with columns ``t, j, coef, value``."""
    return coef_rows_csv(panel.data, ["t", "j", "coef", "value"])


def panel_from_csv(text: str, basis: BasisSpec) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    body = np.array([[float(x) for x in r] for r in rows[1:]])
    if body.size == 0:
        raise ValueError("empty panel csv")
    idx = body[:, :-1].astype(int)
    shape = tuple(idx.max(axis=0) + 1)
    out = np.zeros(shape)
    out[tuple(idx.T)] = body[:, -1]
    if out.ndim == 3 and out.shape[2] != basis.G:
        raise ValueError(f"panel csv has {out.shape[2]} coefficients, basis G={basis.G}")
    return out


def curve_to_csv(c: Curve) -> str:
    return coef_rows_csv(c.coef, ["coef", "value"])


def dumps(obj) -> str:
    """Stable JSON for any of the value types above."""
    return json.dumps(obj.to_dict(), sort_keys=True)
