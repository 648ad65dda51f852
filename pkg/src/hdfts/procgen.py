"""Simulation of sub-Gaussian functional/scalar linear processes.

All generators reduce to one object, :class:`LinearProcess`: a finite moving
average ``W_t = sum_l Theta_l e_{t-l}`` of i.i.d. unit-variance innovations,
with the rows of ``W_t`` partitioned into named groups (functional variables
of dimension ``G`` or scalar variables of dimension 1).  Population
autocovariances follow from the finite MA formula, so every second-order
quantity used as ground truth is exact.

Convention: ``autocov(h) = cov(W_t, W_{t+h}) = sum_l Theta_l Theta_{l+h}^T``,
matching the sample estimator ``(n-h)^{-1} sum_t W_t W_{t+h}^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .funcspace import BasisSpec, BlockKernel, FunctionalPanel, SCALAR_BASIS

ScoreLaw = Literal["gaussian", "scaled_uniform", "scaled_rademacher"]
SCORE_LAWS = ("gaussian", "scaled_uniform", "scaled_rademacher")


def draw_scores(rng: np.random.Generator, law: str, size) -> np.ndarray:
    """Mean-zero, unit-variance sub-Gaussian draws."""
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "scaled_uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    if law == "scaled_rademacher":
        return rng.integers(0, 2, size).astype(float) * 2.0 - 1.0
    raise ValueError(f"unknown score law {law!r}; expected one of {SCORE_LAWS}")


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# core flat process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Group:
    name: str
    nvar: int
    basis: BasisSpec

    @property
    def dim(self) -> int:
        return self.basis.G

    @property
    def size(self) -> int:
        return self.nvar * self.basis.G


@dataclass(frozen=True)
class LinearProcess:
    """Finite MA process in coefficient space.

    Parameters
    ----------
    coefs : sequence of ndarray, each ``(N, K)``
        ``Theta_0, ..., Theta_L``.
    groups : sequence of Group
        Row partition of ``W_t`` (in order).
    innov_laws : sequence of (int, str)
        Column partition of the innovations with the score law of each part.
    """

    coefs: tuple
    groups: tuple
    innov_laws: tuple

    def __post_init__(self):
        coefs = tuple(np.array(c, dtype=float) for c in self.coefs)
        if not coefs:
            raise ValueError("process needs at least one MA coefficient")
        N, K = coefs[0].shape
        for c in coefs:
            if c.shape != (N, K):
                raise ValueError("all MA coefficients must share one shape")
            c.setflags(write=False)
        if sum(g.size for g in self.groups) != N:
            raise ValueError("groups do not partition the process dimension")
        if sum(k for k, _ in self.innov_laws) != K:
            raise ValueError("innovation laws do not cover all innovations")
        for _, law in self.innov_laws:
            if law not in SCORE_LAWS:
                raise ValueError(f"unknown score law {law!r}")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError("group names must be unique")
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "innov_laws", tuple((int(k), law) for k, law in self.innov_laws))

    @property
    def N(self) -> int:
        return self.coefs[0].shape[0]

    @property
    def K(self) -> int:
        return self.coefs[0].shape[1]

    @property
    def order(self) -> int:
        return len(self.coefs) - 1

    def group(self, name: str) -> Group:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(f"no group {name!r}; have {[g.name for g in self.groups]}")

    def rows(self, name: str) -> slice:
        start = 0
        for g in self.groups:
            if g.name == name:
                return slice(start, start + g.size)
            start += g.size
        raise KeyError(f"no group {name!r}")

    def var_rows(self, name: str, variables: Optional[Sequence[int]] = None) -> np.ndarray:
        """Flat row indices of selected variables of one group."""
        g = self.group(name)
        s = self.rows(name)
        vs = range(g.nvar) if variables is None else variables
        return np.concatenate([np.arange(s.start + j * g.dim, s.start + (j + 1) * g.dim) for j in vs]) if len(vs) else np.zeros(0, int)

    def autocov(self, h: int) -> np.ndarray:
        """Flat ``cov(W_t, W_{t+h})``; zero beyond the MA order."""
        if h < 0:
            return self.autocov(-h).T
        if h > self.order:
            return np.zeros((self.N, self.N))
        out = np.zeros((self.N, self.N))
        for l in range(self.order + 1 - h):
            out += self.coefs[l] @ self.coefs[l + h].T
        return out

    def simulate_flat(self, n: int, seed) -> np.ndarray:
        """``n`` consecutive draws of ``W_t`` as an ``(n, N)`` array.

        Exactly ``order`` presample innovations are drawn; an MA process is
        stationary from its first output.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = as_rng(seed)
        L = self.order
        parts = [draw_scores(rng, law, (n + L, k)) for k, law in self.innov_laws]
        e = np.concatenate(parts, axis=1) if parts else np.zeros((n + L, 0))
        W = np.zeros((n, self.N))
        for l, th in enumerate(self.coefs):
            W += e[L - l:L - l + n] @ th.T
        return W

    def split(self, W: np.ndarray, name: str) -> np.ndarray:
        g = self.group(name)
        return W[:, self.rows(name)].reshape(W.shape[0], g.nvar, g.dim)

    def block_autocov(self, h: int, a: str, b: Optional[str] = None) -> BlockKernel:
        """Population cross-(auto)covariance between groups as a BlockKernel."""
        b = a if b is None else b
        ga, gb = self.group(a), self.group(b)
        M = self.autocov(h)[self.rows(a), self.rows(b)]
        return BlockKernel.from_matrix(M, ga.nvar, gb.nvar, ga.basis, gb.basis)

    def restrict(self, names: Sequence[str]) -> "LinearProcess":
        """Subprocess made of the listed groups (innovations unchanged)."""
        idx = np.concatenate([np.arange(self.N)[self.rows(nm)] for nm in names])
        return LinearProcess(tuple(c[idx] for c in self.coefs), tuple(self.group(nm) for nm in names), self.innov_laws)

    def compose(self, name: str, nvar: int, basis: BasisSpec,
                loadings: Sequence[tuple] = (), noise: Optional["LinearProcess"] = None,
                noise_name: Optional[str] = None) -> "LinearProcess":
        """Append a new group ``V_t = sum_(lag, M) M W_{t-lag} + noise_t``.

        ``M`` has shape ``(nvar * basis.G, N)``.  Noise innovations are
        appended (independent of the existing ones).  If ``noise_name`` is
        given the noise itself is exposed as a further group.
        """
        size = nvar * basis.G
        Ln = noise.order if noise is not None else 0
        lag_max = max([lag for lag, _ in loadings], default=0)
        L = max(self.order + lag_max, Ln, self.order)
        Kn = noise.K if noise is not None else 0
        if noise is not None and noise.N != size:
            raise ValueError(f"noise dimension {noise.N} differs from new group size {size}")
        extra_rows = size if noise_name else 0
        coefs = []
        for l in range(L + 1):
            th = np.zeros((self.N + size + extra_rows, self.K + Kn))
            if l <= self.order:
                th[: self.N, : self.K] = self.coefs[l]
            for lag, M in loadings:
                M = np.asarray(M, dtype=float)
                if M.shape != (size, self.N):
                    raise ValueError(f"loading shape {M.shape} != {(size, self.N)}")
                if 0 <= l - lag <= self.order:
                    th[self.N:self.N + size, : self.K] += M @ self.coefs[l - lag]
            if noise is not None and l <= Ln:
                th[self.N:self.N + size, self.K:] = noise.coefs[l]
                if noise_name:
                    th[self.N + size:, self.K:] = noise.coefs[l]
            coefs.append(th)
        groups = list(self.groups) + [Group(name, nvar, basis)]
        if noise_name:
            groups.append(Group(noise_name, nvar, basis))
        laws = list(self.innov_laws) + (list(noise.innov_laws) if noise is not None else [])
        return LinearProcess(tuple(coefs), tuple(groups), tuple(laws))


# ---------------------------------------------------------------------------
# user-facing specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorSpec:
    """Innovation curves ``eps_tj = scale_j * sum_l sqrt(C l^-alpha) z_tjl e_l``.

    The basis functions are the eigenfunctions of each error covariance.
    """

    C: float = 1.0
    alpha: float = 2.0
    score_law: ScoreLaw = "gaussian"
    scale: Union[float, tuple] = 1.0

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("error eigenvalue constant C must be positive")
        if self.alpha <= 0:
            raise ValueError("error eigenvalue decay alpha must be positive (strictly decreasing eigenvalues)")
        if self.score_law not in SCORE_LAWS:
            raise ValueError(f"unknown score law {self.score_law!r}")
        if not np.isscalar(self.scale):
            object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))

    def eigenvalues(self, G: int) -> np.ndarray:
        return self.C * np.arange(1, G + 1, dtype=float) ** (-self.alpha)

    def scales(self, p: int) -> np.ndarray:
        if np.isscalar(self.scale):
            return np.full(p, float(self.scale))
        s = np.asarray(self.scale, dtype=float)
        if s.size != p:
            raise ValueError(f"error scale has {s.size} entries for p={p}")
        return s

    def sd_vector(self, p: int, G: int) -> np.ndarray:
        return (self.scales(p)[:, None] * np.sqrt(self.eigenvalues(G))[None, :]).reshape(-1)

    def to_dict(self) -> dict:
        return {"C": self.C, "alpha": self.alpha, "score_law": self.score_law,
                "scale": self.scale if np.isscalar(self.scale) else list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSpec":
        sc = d.get("scale", 1.0)
        return cls(C=float(d.get("C", 1.0)), alpha=float(d.get("alpha", 2.0)),
                   score_law=d.get("score_law", "gaussian"), scale=sc if np.isscalar(sc) else tuple(sc))


@dataclass(frozen=True)
class MAProcessSpec:
    """``X_t = sum_{l=0}^{L_A} A_l(eps_{t-l})`` with ``A_l`` as ``(p, p, G, G)`` BlockKernels."""

    lags: tuple
    error: ErrorSpec = field(default_factory=ErrorSpec)

    def __post_init__(self):
        lags = tuple(self.lags)
        if not lags:
            raise ValueError("need at least A_0")
        p, q, _, _ = lags[0].coef.shape
        if p != q:
            raise ValueError("MA coefficient blocks must be p x p")
        for A in lags:
            if A.coef.shape != lags[0].coef.shape:
                raise ValueError("all MA coefficients must share one shape")
        object.__setattr__(self, "lags", lags)

    @property
    def p(self) -> int:
        return self.lags[0].coef.shape[0]

    @property
    def basis(self) -> BasisSpec:
        return self.lags[0].basis_u

    @property
    def G(self) -> int:
        return self.basis.G

    @property
    def order(self) -> int:
        return len(self.lags) - 1

    def summability(self) -> float:
        """``sum_l ||A_l||_inf`` (max row sum of block HS norms)."""
        return float(sum(A.hs_norms().sum(axis=1).max() for A in self.lags))

    def error_kernels(self) -> BlockKernel:
        """Diagonal BlockKernel of error covariance kernels ``Sigma_0^eps``."""
        sd = self.error.sd_vector(self.p, self.G)
        return BlockKernel.from_matrix(np.diag(sd**2), self.p, self.p, self.basis)

    def to_linear(self) -> LinearProcess:
        sd = self.error.sd_vector(self.p, self.G)
        coefs = tuple(A.to_matrix() * sd[None, :] for A in self.lags)
        return LinearProcess(coefs, (Group("X", self.p, self.basis),), ((self.p * self.G, self.error.score_law),))

    def to_dict(self) -> dict:
        return {"type": "ma", "basis": self.basis.to_dict(), "p": self.p,
                "lags": [A.coef.reshape(-1).tolist() for A in self.lags], "error": self.error.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MAProcessSpec":
        basis = BasisSpec.from_dict(d["basis"])
        p, G = int(d["p"]), basis.G
        lags = tuple(BlockKernel(np.asarray(a, dtype=float).reshape(p, p, G, G), basis) for a in d["lags"])
        return cls(lags, ErrorSpec.from_dict(d.get("error", {})))


@dataclass(frozen=True)
class MixedProcessSpec:
    """Functional ``X_t`` joined with scalar ``Z_t = sum_m B_m eta_{t-m} + C vec(X_t)``.

    ``scalar_lags`` are ``d x d`` matrices, ``loading`` is ``d x (p G)`` acting
    on the basis coefficients of ``X_t``.
    """

    functional: MAProcessSpec
    scalar_lags: tuple
    loading: Optional[np.ndarray] = None
    scalar_law: ScoreLaw = "gaussian"

    def __post_init__(self):
        lags = tuple(np.atleast_2d(np.array(b, dtype=float)) for b in self.scalar_lags)
        if not lags:
            raise ValueError("need at least B_0")
        d = lags[0].shape[0]
        for b in lags:
            if b.shape != (d, d):
                raise ValueError("scalar MA coefficients must be d x d")
        object.__setattr__(self, "scalar_lags", lags)
        if self.loading is not None:
            C = np.array(self.loading, dtype=float)
            if C.shape != (d, self.functional.p * self.functional.G):
                raise ValueError(f"loading must be d x pG = {(d, self.functional.p * self.functional.G)}, got {C.shape}")
            object.__setattr__(self, "loading", C)
        if self.scalar_law not in SCORE_LAWS:
            raise ValueError(f"unknown score law {self.scalar_law!r}")

    @property
    def d(self) -> int:
        return self.scalar_lags[0].shape[0]

    @property
    def p(self) -> int:
        return self.functional.p

    def scalar_summability(self) -> float:
        return float(sum(np.abs(b).sum() for b in self.scalar_lags))

    def to_linear(self) -> LinearProcess:
        X = self.functional.to_linear()
        eta = LinearProcess(self.scalar_lags, (Group("Z", self.d, SCALAR_BASIS),), ((self.d, self.scalar_law),))
        loads = [(0, self.loading)] if self.loading is not None else []
        return X.compose("Z", self.d, SCALAR_BASIS, loads, eta)

    def to_dict(self) -> dict:
        return {"type": "mixed", "functional": self.functional.to_dict(),
                "scalar_lags": [b.tolist() for b in self.scalar_lags],
                "loading": None if self.loading is None else self.loading.tolist(),
                "scalar_law": self.scalar_law}

    @classmethod
    def from_dict(cls, d: dict) -> "MixedProcessSpec":
        return cls(MAProcessSpec.from_dict(d["functional"]), tuple(np.asarray(b) for b in d["scalar_lags"]),
                   None if d.get("loading") is None else np.asarray(d["loading"]), d.get("scalar_law", "gaussian"))


ProcessSpec = Union[MAProcessSpec, MixedProcessSpec]


def process_from_dict(d: dict) -> ProcessSpec:
    if d.get("type") == "mixed":
        return MixedProcessSpec.from_dict(d)
    return MAProcessSpec.from_dict(d)


def as_linear(spec) -> LinearProcess:
    return spec if isinstance(spec, LinearProcess) else spec.to_linear()


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _eye_blocks(p: int, basis: BasisSpec, c: float) -> np.ndarray:
    out = np.zeros((p, p, basis.G, basis.G))
    for j in range(p):
        out[j, j] = c * np.eye(basis.G)
    return out


def banded_kernel(p: int, basis: BasisSpec, diag: float, offdiag: float = 0.0, decay: float = 0.0) -> BlockKernel:
    """Blocks ``diag * D`` on the diagonal and ``offdiag * D`` on the first off-diagonals.

    ``D = diag(m^-decay)``, so ``decay = 0`` gives identity blocks.
    """
    D = np.diag(np.arange(1, basis.G + 1, dtype=float) ** (-decay))
    out = np.zeros((p, p, basis.G, basis.G))
    for j in range(p):
        out[j, j] = diag * D
        if j + 1 < p:
            out[j, j + 1] = offdiag * D
            out[j + 1, j] = offdiag * D
    return BlockKernel(out, basis)


def white_noise(p: int, basis: Optional[BasisSpec] = None, error: Optional[ErrorSpec] = None) -> MAProcessSpec:
    basis = basis or BasisSpec()
    return MAProcessSpec((BlockKernel(_eye_blocks(p, basis, 1.0), basis),), error or ErrorSpec())


def fma(p: int, basis: Optional[BasisSpec] = None, diag: Sequence[float] = (1.0, 0.5),
        offdiag: Sequence[float] = (0.0, 0.0), decay: float = 0.0,
        error: Optional[ErrorSpec] = None) -> MAProcessSpec:
    """Banded FMA(L) with ``A_l = banded_kernel(diag[l], offdiag[l])``."""
    basis = basis or BasisSpec()
    if len(offdiag) != len(diag):
        raise ValueError("diag and offdiag need one entry per lag")
    lags = tuple(banded_kernel(p, basis, a, b, decay) for a, b in zip(diag, offdiag))
    return MAProcessSpec(lags, error or ErrorSpec())


def far1_expansion(A: BlockKernel, error: Optional[ErrorSpec] = None, tol: float = 1e-8,
                   max_lags: int = 5000) -> MAProcessSpec:
    """FAR(1) ``X_t = A(X_{t-1}) + eps_t`` as its MA(inf) expansion ``A^l``, truncated.

    Truncation stops once the geometric bound on the tail sum of ``||A^l||``
    drops below ``tol``.
    """
    M = A.to_matrix()
    op = np.linalg.norm(M, 2)
    rho = max(abs(np.linalg.eigvals(M))) if M.size else 0.0
    if rho >= 1.0:
        raise ValueError(f"FAR(1) operator is not stable (spectral radius {rho:.4f})")
    p = A.coef.shape[0]
    basis = A.basis_u
    powers = [np.eye(M.shape[0])]
    cur = powers[0]
    for _ in range(max_lags):
        cur = cur @ M
        nrm = np.linalg.norm(cur, 2)
        powers.append(cur)
        if op < 1.0:
            if nrm * op / (1.0 - op) < tol:
                break
        elif nrm < tol * 1e-3:
            break
    else:
        raise ValueError("FAR(1) expansion did not reach the requested tail tolerance")
    lags = tuple(BlockKernel.from_matrix(P, p, p, basis) for P in powers)
    return MAProcessSpec(lags, error or ErrorSpec())


def random_ma_spec(rng, p: int, G: int, order: int = 1, scale: float = 0.4,
                   error: Optional[ErrorSpec] = None) -> MAProcessSpec:
    """Random dense FMA(order) with ``A_0 = I`` plus noise; used for property tests."""
    rng = as_rng(rng)
    basis = BasisSpec(G=G)
    lags = [BlockKernel(_eye_blocks(p, basis, 1.0) + scale * rng.standard_normal((p, p, G, G)) / np.sqrt(p * G), basis)]
    for _ in range(order):
        lags.append(BlockKernel(scale * rng.standard_normal((p, p, G, G)) / np.sqrt(p * G), basis))
    return MAProcessSpec(tuple(lags), error or ErrorSpec())


def score_loading(p: int, G: int, d: int, weights: dict) -> np.ndarray:
    """Loading matrix with ``weights[(k, j, l)]`` on coefficient ``l`` of ``X_tj`` for ``Z_tk``."""
    C = np.zeros((d, p * G))
    for (k, j, l), w in weights.items():
        C[k, j * G + l] = w
    return C


def simulate_fma(spec: Union[MAProcessSpec, LinearProcess], n: int, seed=None) -> FunctionalPanel:
    lp = as_linear(spec)
    W = lp.simulate_flat(n, seed)
    g = lp.groups[0]
    return FunctionalPanel(lp.split(W, g.name), g.basis)


def simulate_mixed(spec: MixedProcessSpec, n: int, seed=None) -> FunctionalPanel:
    lp = spec.to_linear()
    W = lp.simulate_flat(n, seed)
    return FunctionalPanel(lp.split(W, "X"), spec.functional.basis, scalar=W[:, lp.rows("Z")])


def population_autocov(spec, h: int) -> BlockKernel:
    """Exact ``cov(X_t, X_{t+h})`` of the functional part as a ``p x p`` BlockKernel."""
    lp = as_linear(spec)
    return lp.block_autocov(h, "X")


def population_eigen(lp: LinearProcess, name: str = "X") -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues ``(nvar, G)`` and eigenfunction coefficients ``(nvar, G, G)``
    (``[j, l, :]`` is the l-th eigenfunction) of each marginal covariance."""
    from .fpca import sym_eigen

    g = lp.group(name)
    S = lp.autocov(0)[lp.rows(name), lp.rows(name)]
    vals = np.zeros((g.nvar, g.dim))
    vecs = np.zeros((g.nvar, g.dim, g.dim))
    for j in range(g.nvar):
        sl = slice(j * g.dim, (j + 1) * g.dim)
        vals[j], vecs[j] = sym_eigen(S[sl, sl])
    return vals, vecs


# ---------------------------------------------------------------------------
# regression scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarNoise:
    """Scalar MA error ``eps_t = sigma * sum_m c_m eta_{t-m}`` (``c_0 = 1``)."""

    sigma: float = 1.0
    ma: tuple = ()
    law: ScoreLaw = "gaussian"

    def to_linear(self) -> LinearProcess:
        coefs = [np.array([[self.sigma]])] + [np.array([[self.sigma * c]]) for c in self.ma]
        return LinearProcess(tuple(coefs), (Group("eps", 1, SCALAR_BASIS),), ((1, self.law),))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "ma": list(self.ma), "law": self.law}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarNoise":
        return cls(float(d.get("sigma", 1.0)), tuple(d.get("ma", ())), d.get("law", "gaussian"))


@dataclass(frozen=True)
class RegressionScenario:
    """Ground truth for FLLR (``model='fllr'``) or PFLR (``model='pflr'``).

    FLLR: ``beta`` is a BlockKernel with ``(L+1) x p`` blocks of shape
    ``(G, Gy)``; ``noise`` is a one-variable MAProcessSpec on the response
    basis.  PFLR: ``beta`` is a ``(p, G)`` array of coefficient curves,
    ``gamma`` a ``(d,)`` vector and ``noise`` a :class:`ScalarNoise`.
    """

    model: Literal["fllr", "pflr"]
    covariate: ProcessSpec
    beta: Union[BlockKernel, np.ndarray]
    noise: Union[MAProcessSpec, ScalarNoise]
    gamma: Optional[np.ndarray] = None
    kappa: float = 2.5
    alpha: float = 2.0

    def __post_init__(self):
        if self.model not in ("fllr", "pflr"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "fllr":
            if not isinstance(self.beta, BlockKernel):
                raise ValueError("FLLR truth must be a BlockKernel")
            if not isinstance(self.covariate, MAProcessSpec):
                raise ValueError("FLLR covariates must be an MAProcessSpec")
            if self.beta.coef.shape[1] != self.covariate.p:
                raise ValueError("beta grid has wrong number of covariates")
        else:
            b = np.array(self.beta, dtype=float)
            cov = self.covariate
            p = cov.p
            G = cov.functional.G if isinstance(cov, MixedProcessSpec) else cov.G
            if b.shape != (p, G):
                raise ValueError(f"PFLR beta must be (p, G) = {(p, G)}, got {b.shape}")
            object.__setattr__(self, "beta", b)
            d = cov.d if isinstance(cov, MixedProcessSpec) else 0
            g = np.zeros(d) if self.gamma is None else np.array(self.gamma, dtype=float).reshape(-1)
            if g.size != d:
                raise ValueError(f"gamma has {g.size} entries for d={d}")
            object.__setattr__(self, "gamma", g)

    @property
    def L(self) -> int:
        return self.beta.coef.shape[0] - 1 if self.model == "fllr" else 0

    def support(self) -> set:
        if self.model == "fllr":
            hs = self.beta.hs_norms()
            return {(int(h), int(j)) for h, j in zip(*np.nonzero(hs > 1e-8))}
        return {int(j) for j in np.nonzero(np.linalg.norm(self.beta, axis=1) > 1e-8)[0]}

    def scalar_support(self) -> set:
        return {int(k) for k in np.nonzero(np.abs(self.gamma) > 0)[0]} if self.gamma is not None else set()

    def to_dict(self) -> dict:
        out = {"model": self.model, "covariate": self.covariate.to_dict(), "kappa": self.kappa, "alpha": self.alpha,
               "noise": self.noise.to_dict()}
        if self.model == "fllr":
            out["beta"] = self.beta.to_dict()
        else:
            out["beta"] = self.beta.tolist()
            out["gamma"] = self.gamma.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionScenario":
        cov = process_from_dict(d["covariate"])
        if d["model"] == "fllr":
            return cls("fllr", cov, BlockKernel.from_dict(d["beta"]), MAProcessSpec.from_dict(d["noise"]),
                       kappa=d.get("kappa", 2.5), alpha=d.get("alpha", 2.0))
        return cls("pflr", cov, np.asarray(d["beta"]), ScalarNoise.from_dict(d["noise"]),
                   gamma=np.asarray(d["gamma"]), kappa=d.get("kappa", 2.5), alpha=d.get("alpha", 2.0))


def make_fllr_scenario(covariate: MAProcessSpec, L: int, support: Sequence[tuple], mu: float = 8.0,
                       kappa: float = 2.5, rank: Optional[int] = None,
                       noise: Optional[MAProcessSpec] = None, response_basis: Optional[BasisSpec] = None) -> RegressionScenario:
    """``beta_hj = sum_{l,m <= rank} mu (l+m)^(-kappa-1/2) psi_jl (x) phi_m`` on ``support``.

    ``psi_jl`` are population eigenfunctions of ``Sigma_0,jj``; ``phi_m`` are
    the response basis functions (the eigenfunctions of the response noise).
    """
    basis = covariate.basis
    by = response_basis or basis
    rank = rank or min(basis.G, by.G)
    _, vecs = population_eigen(covariate.to_linear(), "X")
    ls = np.arange(1, rank + 1, dtype=float)
    a = mu * (ls[:, None] + ls[None, :]) ** (-kappa - 0.5)
    coef = np.zeros((L + 1, covariate.p, basis.G, by.G))
    for h, j in support:
        if not (0 <= h <= L and 0 <= j < covariate.p):
            raise ValueError(f"support element {(h, j)} out of range")
        psi = vecs[j, :rank, :]  # (rank, G)
        coef[h, j] = psi.T @ a @ np.eye(by.G)[:rank]
    noise = noise or white_noise(1, by, ErrorSpec(C=0.25, alpha=2.0))
    return RegressionScenario("fllr", covariate, BlockKernel(coef, basis, by), noise,
                              kappa=kappa, alpha=covariate.error.alpha)


def make_pflr_scenario(covariate: MixedProcessSpec, support: Sequence[int], scalar_support: Sequence[int],
                       mu: float = 2.0, kappa: float = 2.5, rank: Optional[int] = None,
                       gamma_value: float = 1.0, noise: Optional[ScalarNoise] = None) -> RegressionScenario:
    """``beta_j = sum_{l <= rank} mu l^-kappa psi_jl`` on ``support``; ``gamma_k = gamma_value`` on ``scalar_support``."""
    X = covariate.functional
    rank = rank or X.G
    _, vecs = population_eigen(X.to_linear(), "X")
    a = mu * np.arange(1, rank + 1, dtype=float) ** (-kappa)
    beta = np.zeros((X.p, X.G))
    for j in support:
        beta[j] = a @ vecs[j, :rank, :]
    gamma = np.zeros(covariate.d)
    for k in scalar_support:
        gamma[k] = gamma_value
    return RegressionScenario("pflr", covariate, beta, noise or ScalarNoise(), gamma=gamma,
                              kappa=kappa, alpha=X.error.alpha)


def gen_fllr_data(scn: RegressionScenario, n: int, seed=None) -> FunctionalPanel:
    """Panel of ``X_t`` with functional response ``Y_t`` for ``t = 1..n``.

    Covariates are drawn for ``n + L`` steps and the first ``L`` are used
    only to form the lagged terms of the first responses.
    """
    if scn.model != "fllr":
        raise ValueError("scenario is not FLLR-typed")
    rng = as_rng(seed)
    L = scn.L
    cov = scn.covariate.to_linear()
    X = cov.split(cov.simulate_flat(n + L, rng), "X")
    Y = np.zeros((n, scn.beta.basis_v.G))
    for h in range(L + 1):
        Y += np.einsum("tjg,jgm->tm", X[L - h:L - h + n], scn.beta.coef[h])
    eps = scn.noise.to_linear().simulate_flat(n, rng)
    Y += eps
    return FunctionalPanel(X[L:], scn.covariate.basis, response=Y, response_basis=scn.beta.basis_v)


def gen_pflr_data(scn: RegressionScenario, n: int, seed=None) -> FunctionalPanel:
    """Panel of ``X_t``, ``Z_t`` and scalar ``Y_t = sum_j <X_tj, beta_j> + Z_t^T gamma + eps_t``."""
    if scn.model != "pflr":
        raise ValueError("scenario is not PFLR-typed")
    rng = as_rng(seed)
    cov = scn.covariate
    if isinstance(cov, MixedProcessSpec):
        lp = cov.to_linear()
        W = lp.simulate_flat(n, rng)
        X, Z = lp.split(W, "X"), W[:, lp.rows("Z")]
        basis = cov.functional.basis
    else:
        lp = cov.to_linear()
        X, Z = lp.split(lp.simulate_flat(n, rng), "X"), np.zeros((n, 0))
        basis = cov.basis
    y = np.einsum("tjg,jg->t", X, scn.beta) + Z @ scn.gamma
    y = y + scn.noise.to_linear().simulate_flat(n, rng)[:, 0]
    return FunctionalPanel(X, basis, scalar=Z, response=y)


def fllr_population(scn: RegressionScenario) -> LinearProcess:
    """Joint process with groups ``X`` (covariates), ``Y`` (response) and ``eps`` (response noise)."""
    cov = scn.covariate.to_linear()
    p, G = scn.covariate.p, scn.covariate.G
    by = scn.beta.basis_v
    loads = []
    for h in range(scn.L + 1):
        M = np.zeros((by.G, p * G))
        for j in range(p):
            M[:, j * G:(j + 1) * G] = scn.beta.coef[h, j].T
        loads.append((h, M))
    return cov.compose("Y", 1, by, loads, scn.noise.to_linear(), noise_name="eps")
