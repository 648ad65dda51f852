"""Monte Carlo studies of deviation bounds, restricted eigenvalues and estimation rates.

Every (grid point, replicate) task draws its randomness from
``SeedSequence([base_seed, n, p, d, s, q, replicate])`` and runs with BLAS
pinned to one thread, so the record set does not depend on how tasks are
scheduled.  Records are sorted before they are written.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .fllr import (build_design, check_re_condition, estimation_error, lambda_max, fit_path,
                   population_rayleigh_inf)
from .fpca import eigendecompose, population_score_cov, sample_cross_cov, score_cross_cov
from .funcspace import BasisSpec, FunctionalPanel, SCALAR_BASIS
from .pflr import (build_design_pflr, check_re_mixed, estimation_error_pflr, population_rayleigh_inf_mixed,
                   solve_mixed_lasso)
from .procgen import (ErrorSpec, Group, LinearProcess, MixedProcessSpec, ScalarNoise, fma,
                      gen_fllr_data, gen_pflr_data, make_fllr_scenario, make_pflr_scenario, population_eigen,
                      score_loading)
from .spectral import sparse_stability

log = logging.getLogger(__name__)

STUDY_KINDS = ("cov_deviation", "score_deviation", "re", "rate")
CSV_COLUMNS = ("study", "n", "p", "d", "s", "q", "replicate", "statistic", "value", "seconds")


@dataclass(frozen=True)
class StudyConfig:
    """Grid over ``(n, p, d, s, q)`` with ``replicates`` draws per point.

    ``params`` holds study-specific settings (score law, lags, model, lambda
    grid, ...); see the ``_task_*`` functions for the keys each kind reads.
    """

    kind: str
    n: tuple
    p: tuple = (10,)
    d: tuple = (0,)
    s: tuple = (0,)
    q: tuple = (3,)
    replicates: int = 1
    base_seed: int = 0
    params: dict = field(default_factory=dict)
    timing: bool = False

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        for name in ("n", "p", "d", "s", "q"):
            v = getattr(self, name)
            v = tuple(int(x) for x in (v if isinstance(v, (list, tuple)) else (v,)))
            if not v:
                raise ValueError(f"grid {name!r} is empty")
            object.__setattr__(self, name, v)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    def grid(self) -> list[tuple]:
        return list(product(self.n, self.p, self.d, self.s, self.q))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": list(self.n), "p": list(self.p), "d": list(self.d), "s": list(self.s),
                "q": list(self.q), "replicates": self.replicates, "base_seed": self.base_seed,
                "params": self.params, "timing": self.timing}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        keys = ("kind", "n", "p", "d", "s", "q", "replicates", "base_seed", "params", "timing")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True, order=True)
class StudyRecord:
    study: str
    n: int
    p: int
    d: int
    s: int
    q: int
    replicate: int
    statistic: str
    value: float
    seconds: float = 0.0


def task_seed(base_seed: int, point: tuple, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), *map(int, point), int(rep)])


# ---------------------------------------------------------------------------
# study processes
# ---------------------------------------------------------------------------

def _loading_identity(d: int, p: int, G: int, N: int, c: float, offset: int = 0) -> np.ndarray:
    """``(d G) x N`` loading copying ``c X_tk`` into component k for ``k < d``."""
    M = np.zeros((d * G, N))
    for k in range(d):
        M[k * G:(k + 1) * G, offset + (k % p) * G: offset + (k % p + 1) * G] = c * np.eye(G)
    return M


@lru_cache(maxsize=32)
def joint_process(p: int, d: int, G: int, law: str, coupling: float, noise_C: float, offdiag: float,
                  family: str = "fourier") -> LinearProcess:
    """Groups ``X`` (FMA(1), p variables), ``Y`` = coupling * X_k + eps_k (d variables, eps exposed),
    ``Z`` (d scalars loaded on the leading X scores) and an independent scalar ``e``."""
    basis = BasisSpec(G=G, family=family)
    X = fma(p, basis, diag=(1.0, 0.5), offdiag=(offdiag, 0.0), error=ErrorSpec(score_law=law))
    lp = X.to_linear()
    if d > 0:
        eps = fma(d, basis, diag=(1.0, 0.5), error=ErrorSpec(C=noise_C, score_law=law)).to_linear()
        lp = lp.compose("Y", d, basis, [(0, _loading_identity(d, p, G, lp.N, coupling))], eps, noise_name="eps")
        w = {(k, k % p, 0): 1.0 for k in range(d)}
        w.update({(k, (k + 1) % p, 1): 0.5 for k in range(d)})
        C = np.zeros((d, lp.N))
        C[:, : p * G] = score_loading(p, G, d, w)
        zn = LinearProcess((0.5 * np.eye(d), 0.25 * np.eye(d)), (Group("eta", d, SCALAR_BASIS),), ((d, law),))
        lp = lp.compose("Z", d, SCALAR_BASIS, [(0, C)], zn)
    en = LinearProcess((np.eye(1),), (Group("eta", 1, SCALAR_BASIS),), ((1, law),))
    return lp.compose("e", 1, SCALAR_BASIS, [], en)


def _joint_from(params: dict, p: int, d: int) -> LinearProcess:
    return joint_process(p, d, int(params.get("G", 15)), params.get("law", "gaussian"),
                         float(params.get("coupling", 0.8)), float(params.get("noise_C", 0.25)),
                         float(params.get("offdiag", 0.0)), params.get("family", "fourier"))


def _block_max(M: np.ndarray, p: int, d: int, G: int, Gy: int) -> float:
    blk = M.reshape(p, G, d, Gy)
    return float(np.sqrt(np.sum(blk ** 2, axis=(1, 3))).max())


# ---------------------------------------------------------------------------
# per-task workers
# ---------------------------------------------------------------------------

def _task_cov(point, rng, params) -> list[tuple]:
    """``||Sigma_hat_h^{X,Y} - Sigma_h^{X,Y}||_max`` (max block HS norm) for ``h`` in ``params['lags']``."""
    n, p, d, _, _ = point
    lp = _joint_from(params, p, d)
    W = lp.simulate_flat(n, rng)
    X = lp.split(W, "X")
    target, tname = (lp.split(W, "Y"), "Y") if d > 0 else (X, "X")
    G = X.shape[2]
    out = []
    for h in params.get("lags", [0, 1]):
        est = sample_cross_cov(X, h, FunctionalPanel(target, BasisSpec(G=G))).kernel.to_matrix()
        pop = lp.autocov(h)[lp.rows("X"), lp.rows(tname)]
        out.append((f"cov_h{h}", _block_max(est - pop, p, target.shape[1], G, G)))
    return out


@lru_cache(maxsize=32)
def _score_truth(key: tuple):
    p, d, G, law, coupling, noise_C, offdiag, family = key
    lp = joint_process(p, d, G, law, coupling, noise_C, offdiag, family)
    wx, psi = population_eigen(lp, "X")
    wy, phi = population_eigen(lp, "Y")
    return lp, wx, psi, wy, phi


def _task_score(point, rng, params) -> list[tuple]:
    """Normalized max statistics for the X-Y, X-Z, X-eps (functional) and X-eps (scalar) cases."""
    n, p, d, _, _ = point
    if d < 1:
        raise ValueError("score study needs d >= 1")
    key = (p, d, int(params.get("G", 15)), params.get("law", "gaussian"), float(params.get("coupling", 0.8)),
           float(params.get("noise_C", 0.25)), float(params.get("offdiag", 0.0)), params.get("family", "fourier"))
    lp, wx, psi, wy, phi = _score_truth(key)
    M1, M2 = int(params.get("M1", 3)), int(params.get("M2", 3))
    a = float(params.get("alpha", 2.0))
    W = lp.simulate_flat(n, rng)
    X, Y, E = lp.split(W, "X"), lp.split(W, "Y"), lp.split(W, "eps")
    Z, e = W[:, lp.rows("Z")], W[:, lp.rows("e")][:, 0]
    es_x = eigendecompose(X).aligned_to(psi)
    es_y = eigendecompose(Y).aligned_to(phi)
    sx, sy, sz = lp.rows("X"), lp.rows("Y"), lp.rows("Z")
    out = []
    for h in params.get("lags", [0, 1]):
        A = lp.autocov(h)
        t_xy = population_score_cov(A[sx, sy], psi, phi, M1, M2)
        t_xz = population_score_cov(A[sx, sz], psi, None, M1)
        common = dict(omega_x=wx, alpha=(a, a), M1=M1)
        out.append((f"score_xy_h{h}", score_cross_cov(es_x, es_y, h, kind="xy", truth=t_xy, omega_y=wy,
                                                      M2=M2, **common).stat))
        out.append((f"score_xz_h{h}", score_cross_cov(es_x, Z, h, kind="xz", truth=t_xz, **common).stat))
        out.append((f"score_xe_h{h}", score_cross_cov(es_x, E, h, kind="xe", es_y=es_y, omega_y=wy,
                                                      M2=M2, **common).stat))
        out.append((f"score_xes_h{h}", score_cross_cov(es_x, e, h, kind="xe_scalar", **common).stat))
    return out


def fllr_study_scenario(params: dict, p: int, s: int, q: int):
    """FMA covariates with support ``{(i mod (L+1), i * floor(p/s))}`` and rank-q surfaces."""
    key = json.dumps({"p": p, "s": s, "q": q, **{k: params[k] for k in sorted(params) if k in _SCN_KEYS}},
                     sort_keys=True)
    return _fllr_scenario_cached(key)


_SCN_KEYS = ("G", "family", "law", "L", "mu", "kappa", "noise_C", "offdiag", "diag", "mu_gamma",
             "scalar_coupling")


@lru_cache(maxsize=32)
def _fllr_scenario_cached(key: str):
    c = json.loads(key)
    p, s, q = c["p"], c["s"], c["q"]
    L = int(c.get("L", 1))
    basis = BasisSpec(G=int(c.get("G", 15)), family=c.get("family", "fourier"))
    diag = tuple(c.get("diag", (1.0, 0.5)))
    cov = fma(p, basis, diag=diag, offdiag=(float(c.get("offdiag", 0.0)), 0.0),
              error=ErrorSpec(score_law=c.get("law", "gaussian")))
    step = max(1, p // max(s, 1))
    support = [(i % (L + 1), i * step) for i in range(s)]
    noise = fma(1, basis, diag=(1.0,), offdiag=(0.0,), error=ErrorSpec(C=float(c.get("noise_C", 0.25)), score_law=c.get("law", "gaussian")))
    return make_fllr_scenario(cov, L, support, mu=float(c.get("mu", 8.0)), kappa=float(c.get("kappa", 2.5)),
                              rank=q, noise=noise)


def pflr_study_scenario(params: dict, p: int, d: int, s: int, q: int):
    key = json.dumps({"p": p, "d": d, "s": s, "q": q, **{k: params[k] for k in sorted(params) if k in _SCN_KEYS}},
                     sort_keys=True)
    return _pflr_scenario_cached(key)


@lru_cache(maxsize=32)
def _pflr_scenario_cached(key: str):
    c = json.loads(key)
    p, d, s, q = c["p"], c["d"], c["s"], c["q"]
    basis = BasisSpec(G=int(c.get("G", 15)), family=c.get("family", "fourier"))
    law = c.get("law", "gaussian")
    X = fma(p, basis, diag=tuple(c.get("diag", (1.0, 0.5))), offdiag=(float(c.get("offdiag", 0.0)), 0.0),
            error=ErrorSpec(score_law=law))
    sc = float(c.get("scalar_coupling", 0.3))
    w = {(k, k % p, 0): sc for k in range(d)}
    mixed = MixedProcessSpec(X, (np.eye(d), 0.3 * np.eye(d)), score_loading(p, basis.G, d, w), law)
    step_f = max(1, p // max(s, 1))
    step_z = max(1, d // max(s, 1))
    sf = [i * step_f for i in range(s)]
    sz = [i * step_z + 1 for i in range(s)]
    return make_pflr_scenario(mixed, sf, [k % d for k in sz], mu=float(c.get("mu", 2.0)),
                              kappa=float(c.get("kappa", 2.5)), rank=q,
                              gamma_value=float(c.get("mu_gamma", 1.0)),
                              noise=ScalarNoise(float(np.sqrt(c.get("noise_C", 0.25))), (), law))


def oracle_lambda_grid(n: int, p: int, q: int, params: dict, L: int = 0) -> np.ndarray:
    """``c * sqrt(log(p q) / n)`` for ``c`` on a decreasing log grid."""
    hi, lo, k = params.get("lambda_c", [4.0, 0.02, 30])
    return np.sqrt(np.log(max(p * q * (L + 1), 2)) / n) * np.logspace(np.log10(hi), np.log10(lo), int(k))


def _rate_fllr(point, rng, params) -> list[tuple]:
    n, p, d, s, q = point
    scn = fllr_study_scenario(params, p, s, q)
    panel = gen_fllr_data(scn, n, rng)
    des = build_design(panel, scn.L, ("fixed", q))
    grid = oracle_lambda_grid(n, p, q, params, scn.L)
    fits = fit_path(des, grid, tol=float(params.get("tol", 1e-8)))
    errs = [estimation_error(f, scn.beta) for f in fits]
    l1 = np.array([e["l1_func"] for e in errs])
    f1 = np.array([e["support_f1"] for e in errs])
    b = int(np.argmin(l1))
    return [("l1_best", float(l1[b])), ("f1_at_best", float(f1[b])), ("f1_best", float(f1.max())),
            ("lambda_best", float(grid[b])), ("support_size_at_best", float(len(fits[b].support))),
            ("lambda_max", float(lambda_max(des))), ("unconverged", float(sum(not f.converged for f in fits)))]


def _rate_pflr(point, rng, params) -> list[tuple]:
    n, p, d, s, q = point
    scn = pflr_study_scenario(params, p, d, s, q)
    panel = gen_pflr_data(scn, n, rng)
    des = build_design_pflr(panel, ("fixed", q))
    grid = oracle_lambda_grid(n, p, q, params)
    ratio = float(params.get("lambda_ratio", 1.0))
    B0, rows = None, []
    for lam in grid:
        fit = solve_mixed_lasso(des, lam, ratio * lam, tol=float(params.get("tol", 1e-8)), B0=B0)
        B0 = np.r_[fit.B, fit.gamma * des.zscale][:, None]
        rows.append((fit, estimation_error_pflr(fit, scn, q=q)))
    comb = np.array([e["combined"] for _, e in rows])
    f1f = np.array([e["func_f1"] for _, e in rows])
    f1s = np.array([e["scalar_f1"] for _, e in rows])
    b = int(np.argmin(comb))
    both = np.minimum(f1f, f1s)
    k = int(np.argmax(both))
    e = rows[b][1]
    return [("combined_best", float(comb[b])), ("l1_func_at_best", e["l1_func"]), ("l1_scalar_at_best", e["l1_scalar"]),
            ("f1_func_at_best", float(f1f[b])), ("f1_scalar_at_best", float(f1s[b])),
            ("f1_func_best", float(f1f[k])), ("f1_scalar_best", float(f1s[k])), ("lambda_best", float(grid[b])),
            ("unconverged", float(sum(not f.converged for f, _ in rows)))]


def _task_rate(point, rng, params) -> list[tuple]:
    model = params.get("model", "fllr")
    if model == "fllr":
        return _rate_fllr(point, rng, params)
    if model == "pflr":
        return _rate_pflr(point, rng, params)
    raise ValueError(f"unknown model {model!r}")


@lru_cache(maxsize=32)
def _stability_1(key: str) -> float:
    c = json.loads(key)
    scn = _fllr_scenario_cached(key)
    return sparse_stability(scn.covariate, 1, grid_size=int(c.get("grid_size", 256)))


def _task_re(point, rng, params) -> list[tuple]:
    """Empirical vs population restricted eigenvalue and RE violation fractions."""
    n, p, d, s, q = point
    model = params.get("model", "fllr")
    trials = int(params.get("trials", 1000))
    alpha = float(params.get("alpha", 2.0))
    c_gamma = float(params.get("C_gamma", 1.0))
    sub_seed = int(rng.integers(2 ** 31))
    if model == "fllr":
        s = max(s, 1)
        scn = fllr_study_scenario(params, p, s, q)
        panel = gen_fllr_data(scn, n, rng)
        des = build_design(panel, scn.L, ("fixed", q))
        mu = population_rayleigh_inf(scn.covariate, scn.L, q)
        key = json.dumps({"p": p, "s": s, "q": q, "grid_size": int(params.get("grid_size", 256)),
                          **{k: params[k] for k in sorted(params) if k in _SCN_KEYS}}, sort_keys=True)
        m1 = _stability_1(key)
        tau1 = c_gamma * m1 * q ** (alpha + 1) * np.sqrt(np.log(p * q) / n)
        rep = check_re_condition(des, trials, tau1, mu, int(params.get("sparsity", 3)), sub_seed)
        rep0 = check_re_condition(des, trials, 0.0, mu, int(params.get("sparsity", 3)), sub_seed)
    elif model == "pflr":
        scn = pflr_study_scenario(params, p, d, max(s, 1), q)
        panel = gen_pflr_data(scn, n, rng)
        des = build_design_pflr(panel, ("fixed", q))
        mu = population_rayleigh_inf_mixed(scn.covariate, q)
        tau1 = c_gamma * q ** (alpha + 1) * np.sqrt(np.log(p * q + d) / n)
        rep = check_re_mixed(des, trials, tau1, mu, int(params.get("sparsity", 3)), sub_seed)
        rep0 = check_re_mixed(des, trials, 0.0, mu, int(params.get("sparsity", 3)), sub_seed)
    else:
        raise ValueError(f"unknown model {model!r}")
    return [("min_eig", rep["min_eig_proxy"]), ("mu_population", mu),
            ("abs_gap", abs(rep["min_eig_proxy"] - mu)), ("violation_fraction", rep["violation_fraction"]),
            ("violation_fraction_tau1_0", rep0["violation_fraction"]), ("tau1", float(tau1))]


_TASKS = {"cov_deviation": _task_cov, "score_deviation": _task_score, "re": _task_re, "rate": _task_rate}


def _run_task(args) -> list[StudyRecord]:
    kind, point, rep, base_seed, params, timing = args
    rng = np.random.default_rng(task_seed(base_seed, point, rep))
    t0 = time.perf_counter()
    with threadpool_limits(1):
        stats = _TASKS[kind](point, rng, params)
    dt = time.perf_counter() - t0 if timing else 0.0
    return [StudyRecord(kind, *point, rep, name, float(v), dt) for name, v in stats]


def run_study(cfg: StudyConfig, threads: int = 1) -> list[StudyRecord]:
    """All records of a study, sorted by key."""
    tasks = [(cfg.kind, pt, r, cfg.base_seed, cfg.params, cfg.timing)
             for pt in cfg.grid() for r in range(cfg.replicates)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        chunks = [_run_task(t) for t in tasks]
    return sorted(r for c in chunks for r in c)


def run_cov_deviation_study(cfg: StudyConfig, threads: int = 1):
    recs = run_study(_with_kind(cfg, "cov_deviation"), threads)
    return recs, slope_summary(recs)


def run_score_deviation_study(cfg: StudyConfig, threads: int = 1):
    recs = run_study(_with_kind(cfg, "score_deviation"), threads)
    return recs, slope_summary(recs)


def run_re_study(cfg: StudyConfig, threads: int = 1):
    return run_study(_with_kind(cfg, "re"), threads)


def run_rate_study(cfg: StudyConfig, model: str = "fllr", threads: int = 1):
    c = _with_kind(cfg, "rate")
    c = StudyConfig(**{**c.to_dict(), "params": {**c.params, "model": model}})
    recs = run_study(c, threads)
    return recs, slope_summary(recs)


def _with_kind(cfg: StudyConfig, kind: str) -> StudyConfig:
    if cfg.kind != kind:
        raise ValueError(f"config kind {cfg.kind!r} does not match study {kind!r}")
    return cfg


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def ols_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def medians_by_n(records: Sequence[StudyRecord], statistic: str) -> dict:
    by = {}
    for r in records:
        if r.statistic == statistic:
            by.setdefault(r.n, []).append(r.value)
    return {n: float(np.median(v)) for n, v in sorted(by.items())}


def loglog_slope(records: Sequence[StudyRecord], statistic: str, n_boot: int = 200, seed: int = 0,
                 level: float = 0.95) -> dict:
    """OLS slope of log(median) on log(n) with a percentile bootstrap interval over replicates."""
    by = {}
    for r in records:
        if r.statistic == statistic:
            by.setdefault(r.n, []).append(r.value)
    ns = sorted(by)
    if len(ns) < 2:
        return {"statistic": statistic, "n": ns, "medians": [float(np.median(by[n])) for n in ns],
                "slope": None, "ci": None}
    med = [float(np.median(by[n])) for n in ns]
    if min(med) <= 0:
        return {"statistic": statistic, "n": ns, "medians": med, "slope": None, "ci": None}
    lx = np.log(ns)
    slope = ols_slope(lx, np.log(med))
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        m = [np.median(rng.choice(by[n], size=len(by[n]), replace=True)) for n in ns]
        if min(m) > 0:
            boots.append(ols_slope(lx, np.log(m)))
    a = (1 - level) / 2
    ci = [float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))] if boots else None
    return {"statistic": statistic, "n": ns, "medians": med, "slope": slope, "ci": ci}


def decreasing_fraction(medians: dict) -> float:
    """Fraction of adjacent ``n`` pairs over which the median strictly decreases."""
    v = [medians[n] for n in sorted(medians)]
    if len(v) < 2:
        return float("nan")
    return float(np.mean([b < a for a, b in zip(v, v[1:])]))


def slope_summary(records: Sequence[StudyRecord], n_boot: int = 200, seed: int = 0) -> list[dict]:
    """Slope summaries for every ``(study, p, d, s, q, statistic)`` group."""
    groups = {}
    for r in records:
        groups.setdefault((r.study, r.p, r.d, r.s, r.q, r.statistic), []).append(r)
    out = []
    for key in sorted(groups):
        res = loglog_slope(groups[key], key[-1], n_boot, seed)
        res.update(dict(zip(("study", "p", "d", "s", "q"), key[:5])))
        res["decreasing_fraction"] = decreasing_fraction(dict(zip(res["n"], res["medians"])))
        out.append(res)
    return out


def records_to_csv(records: Sequence[StudyRecord]) -> str:
    buf = io.StringIO()
    buf.write(f"# hdfts-version: {__version__}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(records):
        w.writerow([r.study, r.n, r.p, r.d, r.s, r.q, r.replicate, r.statistic, repr(float(r.value)),
                    repr(float(r.seconds))])
    return buf.getvalue()


def records_from_csv(text: str) -> list[StudyRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rd = csv.DictReader(lines)
    return [StudyRecord(r["study"], int(r["n"]), int(r["p"]), int(r["d"]), int(r["s"]), int(r["q"]),
                        int(r["replicate"]), r["statistic"], float(r["value"]), float(r["seconds"])) for r in rd]


def summary_json(cfg: StudyConfig, records: Sequence[StudyRecord]) -> str:
    return json.dumps({"version": __version__, "config": cfg.to_dict(), "summaries": slope_summary(records)},
                      sort_keys=True, indent=2)
