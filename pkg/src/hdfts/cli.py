"""Command line entry point: ``hdfts {simulate,stability,fit-fllr,fit-pflr,mc}``.

Every subcommand reads one JSON config, validates it before doing any
work and writes its outputs atomically.  Exit codes: 0 success, 2 config
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .fllr import build_design, estimation_error, fit_path, lambda_grid, solve_group_lasso
from .funcspace import BasisSpec, BlockKernel, FunctionalPanel, coef_rows_csv
from .mc_harness import StudyConfig, records_to_csv, run_study, summary_json
from .pflr import build_design_pflr, estimation_error_pflr, lambda_max_pflr, solve_mixed_lasso
from .procgen import (ErrorSpec, MAProcessSpec, MixedProcessSpec, RegressionScenario, ScalarNoise,
                      banded_kernel, far1_expansion, fma, gen_fllr_data, gen_pflr_data, make_fllr_scenario,
                      make_pflr_scenario, process_from_dict, score_loading, white_noise)
from .spectral import stability_report

log = logging.getLogger("hdfts")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
HEADER = f"# hdfts-version: {__version__}\n"


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_num = {"type": "number"}
_int = {"type": "integer"}
_pos = {"type": "integer", "minimum": 1}
_error = {"type": "object", "additionalProperties": False,
          "properties": {"C": {"type": "number", "exclusiveMinimum": 0}, "alpha": {"type": "number", "exclusiveMinimum": 1},
                         "score_law": {"enum": ["gaussian", "scaled_uniform", "scaled_rademacher"]},
                         "scale": {"type": ["number", "array", "null"]}}}
_basis = {"G": _pos, "family": {"enum": ["fourier", "legendre"]}}
_functional = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "fma"}, "p": _pos, **_basis,
                        "diag": {"type": "array", "items": _num, "minItems": 1},
                        "offdiag": {"type": "array", "items": _num}, "decay": _num, "error": _error},
         "required": ["kind", "p"], "additionalProperties": False},
        {"properties": {"kind": {"const": "white"}, "p": _pos, **_basis, "error": _error},
         "required": ["kind", "p"], "additionalProperties": False},
        {"properties": {"kind": {"const": "far1"}, "p": _pos, **_basis, "a": _num, "b": _num, "decay": _num,
                        "tol": {"type": "number", "exclusiveMinimum": 0}, "error": _error},
         "required": ["kind", "p", "a"], "additionalProperties": False},
        {"properties": {"kind": {"const": "spec"}, "spec": {"type": "object"}},
         "required": ["kind", "spec"], "additionalProperties": False},
    ],
}
_process = {
    "oneOf": [
        _functional,
        {"type": "object", "additionalProperties": False, "required": ["kind", "functional", "d"],
         "properties": {"kind": {"const": "mixed"}, "functional": _functional, "d": _pos,
                        "scalar_ma": {"type": "array", "items": _num, "minItems": 1},
                        "loading_weight": _num,
                        "scalar_law": {"enum": ["gaussian", "scaled_uniform", "scaled_rademacher"]}}},
    ]
}
_truncation = {"type": "object", "minProperties": 1, "maxProperties": 1, "additionalProperties": False,
               "properties": {"fixed": _pos, "fve": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}}
_scenario = {
    "type": "object",
    "oneOf": [
        {"additionalProperties": False, "required": ["model", "covariate", "L", "support"],
         "properties": {"model": {"const": "fllr"}, "covariate": _functional, "L": {"type": "integer", "minimum": 0},
                        "support": {"type": "array", "items": {"type": "array", "items": _int,
                                                               "minItems": 2, "maxItems": 2}},
                        "mu": _num, "kappa": _num, "rank": _pos,
                        "noise_C": {"type": "number", "exclusiveMinimum": 0}}},
        {"additionalProperties": False, "required": ["model", "covariate", "support", "scalar_support"],
         "properties": {"model": {"const": "pflr"}, "covariate": _process,
                        "support": {"type": "array", "items": _int},
                        "scalar_support": {"type": "array", "items": _int},
                        "mu": _num, "kappa": _num, "rank": _pos, "gamma_value": _num,
                        "noise_sigma": {"type": "number", "exclusiveMinimum": 0}}},
    ],
}
_path = {"type": "object", "additionalProperties": False,
         "properties": {"n_lambda": _pos, "ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}}
_solver = {"tol": {"type": "number", "exclusiveMinimum": 0}, "max_sweeps": _pos,
           "fail_on_nonconvergence": {"type": "boolean"}}

SCHEMAS = {
    "simulate": {"type": "object", "additionalProperties": False, "required": ["n"],
                 "oneOf": [{"required": ["process"]}, {"required": ["scenario"]}],
                 "properties": {"process": _process, "scenario": _scenario, "n": _pos, "seed": _int}},
    "stability": {"type": "object", "additionalProperties": False, "required": ["process"],
                  "properties": {"process": _process,
                                 "grid_size": {"type": "integer", "minimum": 2, "multipleOf": 2},
                                 "ridge": {"type": "number", "minimum": 0},
                                 "sparse_k": {"type": "array", "items": _pos}, "cap": _pos}},
    "fit-fllr": {"type": "object", "additionalProperties": False, "required": ["scenario", "n"],
                 "properties": {"scenario": _scenario, "n": _pos, "seed": _int, "truncation": _truncation,
                                "truncation_y": _truncation, "lambda": {"type": "number", "minimum": 0},
                                "path": _path, **_solver}},
    "fit-pflr": {"type": "object", "additionalProperties": False, "required": ["scenario", "n"],
                 "properties": {"scenario": _scenario, "n": _pos, "seed": _int, "truncation": _truncation,
                                "lambda1": {"type": "number", "minimum": 0}, "lambda2": {"type": "number", "minimum": 0},
                                "lambda_ratio": {"type": "number", "exclusiveMinimum": 0},
                                "standardize_scalar": {"type": "boolean"}, "path": _path, **_solver}},
    "mc": {"type": "object", "additionalProperties": False, "required": ["kind", "n"],
           "properties": {"kind": {"enum": ["cov_deviation", "score_deviation", "re", "rate"]},
                          "n": {"type": "array", "items": _pos, "minItems": 1},
                          "p": {"type": "array", "items": _pos, "minItems": 1},
                          "d": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                          "s": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                          "q": {"type": "array", "items": _pos, "minItems": 1},
                          "replicates": _pos, "base_seed": _int, "params": {"type": "object"},
                          "timing": {"type": "boolean"}}},
}


def load_config(path: str, command: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: malformed JSON: {e.msg}")
    errors = sorted(Draft202012Validator(SCHEMAS[command]).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: field '{where}': {e.message}")
    return cfg


# ---------------------------------------------------------------------------
# config builders
# ---------------------------------------------------------------------------

def _basis_of(c: dict) -> BasisSpec:
    return BasisSpec(G=c.get("G", 15), family=c.get("family", "fourier"))


def build_functional(c: dict) -> MAProcessSpec:
    kind = c["kind"]
    if kind == "spec":
        spec = process_from_dict(c["spec"])
        if not isinstance(spec, MAProcessSpec):
            raise ConfigError("'spec' must describe a functional MA process")
        return spec
    basis = _basis_of(c)
    err = ErrorSpec.from_dict(c.get("error", {}))
    if kind == "fma":
        diag = tuple(c.get("diag", (1.0, 0.5)))
        off = tuple(c.get("offdiag", [0.0] * len(diag)))
        return fma(c["p"], basis, diag, off, c.get("decay", 0.0), err)
    if kind == "white":
        return white_noise(c["p"], basis, err)
    A = banded_kernel(c["p"], basis, c["a"], c.get("b", 0.0), c.get("decay", 0.0))
    return far1_expansion(A, err, c.get("tol", 1e-8))


def build_process(c: dict):
    if c["kind"] != "mixed":
        return build_functional(c)
    X = build_functional(c["functional"])
    d = c["d"]
    ma = c.get("scalar_ma", [1.0])
    w = float(c.get("loading_weight", 0.3))
    C = score_loading(X.p, X.G, d, {(k, k % X.p, 0): w for k in range(d)})
    return MixedProcessSpec(X, tuple(b * np.eye(d) for b in ma), C, c.get("scalar_law", "gaussian"))


def build_scenario(c: dict) -> RegressionScenario:
    if c["model"] == "fllr":
        cov = build_functional(c["covariate"])
        noise = white_noise(1, cov.basis, ErrorSpec(C=c.get("noise_C", 0.25)))
        return make_fllr_scenario(cov, c["L"], [tuple(s) for s in c["support"]], c.get("mu", 8.0),
                                  c.get("kappa", 2.5), c.get("rank"), noise)
    cov = build_process(c["covariate"])
    if not isinstance(cov, MixedProcessSpec):
        raise ConfigError("pflr covariate must be of kind 'mixed'")
    return make_pflr_scenario(cov, c["support"], c["scalar_support"], c.get("mu", 2.0), c.get("kappa", 2.5),
                              c.get("rank"), c.get("gamma_value", 1.0), ScalarNoise(c.get("noise_sigma", 0.5)))


# ---------------------------------------------------------------------------
# atomic output
# ---------------------------------------------------------------------------

class Outputs:
    """Collects named text outputs and commits them all at once."""

    def __init__(self, root: Path):
        self.root = root
        self.items: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.items[name] = text

    def commit(self):
        for name, text in self.items.items():
            dest = self.root / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=f".{dest.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(text)
                os.replace(tmp, dest)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


def _json(obj) -> str:
    return json.dumps({"version": __version__, **obj}, sort_keys=True, indent=2) + "\n"


def _csv(text: str) -> str:
    return HEADER + text


def _f(x) -> float:
    return float(x)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, seed: int, out: Outputs, threads: int):
    n = cfg["n"]
    rng = np.random.default_rng(seed)
    meta = {"n": n, "seed": seed}
    if "scenario" in cfg:
        scn = build_scenario(cfg["scenario"])
        panel = gen_fllr_data(scn, n, rng) if scn.model == "fllr" else gen_pflr_data(scn, n, rng)
        meta["scenario"] = scn.to_dict()
    else:
        spec = build_process(cfg["process"])
        lp = spec.to_linear()
        W = lp.simulate_flat(n, rng)
        basis = spec.functional.basis if isinstance(spec, MixedProcessSpec) else spec.basis
        panel = FunctionalPanel(lp.split(W, "X"), basis,
                                scalar=W[:, lp.rows("Z")] if isinstance(spec, MixedProcessSpec) else None)
        meta["process"] = spec.to_dict()
    out.add("panel.csv", _csv(coef_rows_csv(panel.data, ["t", "j", "coef", "value"])))
    if panel.scalar is not None:
        out.add("scalar.csv", _csv(coef_rows_csv(panel.scalar, ["t", "k", "value"])))
    if panel.response is not None:
        hdr = ["t", "coef", "value"] if panel.response.ndim == 2 else ["t", "value"]
        out.add("response.csv", _csv(coef_rows_csv(panel.response, hdr)))
    meta["basis"] = panel.basis.to_dict()
    out.add("meta.json", _json(meta))


def cmd_stability(cfg: dict, seed: int, out: Outputs, threads: int):
    spec = build_process(cfg["process"])
    rep = stability_report(spec, cfg.get("grid_size", 512), cfg.get("ridge", 1e-10), cfg.get("sparse_k", []),
                           cfg.get("cap", 20000))
    out.add("stability.json", _json(rep.to_dict()))
    out.add("stability.csv", _csv(rep.to_csv()))
    print(f"{'measure':<10} {'k':>6}  value")
    for name, k, v in rep.rows():
        print(f"{name:<10} {k:>6}  {v:.10g}")


def _trunc(c: Optional[dict], default=("fixed", 3)):
    return default if c is None else next(iter(c.items()))


def _check_converged(fits, cfg):
    bad = [f for f in fits if not f.converged]
    if bad and cfg.get("fail_on_nonconvergence", True):
        raise NumericalFailure(f"{len(bad)} of {len(fits)} fits did not reach KKT tolerance")


def cmd_fit_fllr(cfg: dict, seed: int, out: Outputs, threads: int):
    scn = build_scenario(cfg["scenario"])
    if scn.model != "fllr":
        raise ConfigError("fit-fllr needs an fllr scenario")
    panel = gen_fllr_data(scn, cfg["n"], np.random.default_rng(seed))
    des = build_design(panel, scn.L, _trunc(cfg.get("truncation")), _trunc(cfg.get("truncation_y"), None))
    tol, ms = cfg.get("tol", 1e-8), cfg.get("max_sweeps", 10000)
    pc = cfg.get("path", {})
    grid = lambda_grid(des, pc.get("n_lambda", 20), pc.get("ratio", 1e-2))
    fits = fit_path(des, grid, tol, ms)
    errs = [estimation_error(f, _match_truth(scn.beta, f.surfaces)) for f in fits]
    if "lambda" in cfg:
        fit = solve_group_lasso(des, cfg["lambda"], tol, ms)
        chosen = "fixed"
    else:
        fit = fits[int(np.argmin([e["l1_func"] for e in errs]))]
        chosen = "oracle"
    _check_converged(fits + [fit], cfg)
    err = estimation_error(fit, _match_truth(scn.beta, fit.surfaces))
    summary = {**fit.summary(), "selection": chosen, "L": scn.L, "n": cfg["n"], "seed": seed,
               "q1": des.q1.tolist(), "q2": des.q2, "truth_support": sorted([list(s) for s in scn.support()]),
               "error": err}
    out.add("fit.json", _json(summary))
    out.add("surfaces.csv", _csv(coef_rows_csv(fit.surfaces.coef, ["h", "j", "row", "col", "value"])))
    rows = ["lambda,support_size,objective,kkt_residual,sweeps,l1_func,support_f1"]
    for f, e in zip(fits, errs):
        rows.append(f"{_f(f.lam)!r},{len(f.support)},{_f(f.objective_trace[-1])!r},{_f(f.kkt)!r},{f.sweeps},"
                    f"{_f(e['l1_func'])!r},{_f(e['support_f1'])!r}")
    out.add("path.csv", _csv("\n".join(rows) + "\n"))


def _match_truth(beta: BlockKernel, est: BlockKernel) -> BlockKernel:
    if beta.coef.shape != est.coef.shape:
        raise ConfigError("fitted and true surfaces live on different bases")
    return beta


def cmd_fit_pflr(cfg: dict, seed: int, out: Outputs, threads: int):
    scn = build_scenario(cfg["scenario"])
    if scn.model != "pflr":
        raise ConfigError("fit-pflr needs a pflr scenario")
    panel = gen_pflr_data(scn, cfg["n"], np.random.default_rng(seed))
    des = build_design_pflr(panel, _trunc(cfg.get("truncation")))
    tol, ms = cfg.get("tol", 1e-8), cfg.get("max_sweeps", 10000)
    std = cfg.get("standardize_scalar", True)
    ratio = cfg.get("lambda_ratio", 1.0)
    q = int(des.q.max()) if des.q.size else 1
    if "lambda1" in cfg:
        fits = [solve_mixed_lasso(des, cfg["lambda1"], cfg.get("lambda2", ratio * cfg["lambda1"]), tol, ms, std)]
        chosen = "fixed"
    else:
        pc = cfg.get("path", {})
        l1m, l2m = lambda_max_pflr(des, std)
        top = max(l1m, l2m / ratio)
        fits, B0 = [], None
        for lam in top * np.logspace(0, np.log10(pc.get("ratio", 1e-2)), pc.get("n_lambda", 20)):
            f = solve_mixed_lasso(des, lam, ratio * lam, tol, ms, std, B0)
            B0 = np.r_[f.B, f.gamma * des.zscale if std else f.gamma][:, None]
            fits.append(f)
        chosen = "oracle"
    errs = [estimation_error_pflr(f, scn, q=q) for f in fits]
    fit = fits[int(np.argmin([e["combined"] for e in errs]))]
    _check_converged(fits, cfg)
    err = estimation_error_pflr(fit, scn, q=q)
    summary = {**fit.summary(), "selection": chosen, "n": cfg["n"], "seed": seed, "q": des.q.tolist(),
               "truth_support_func": sorted(scn.support()), "truth_support_scalar": sorted(scn.scalar_support()),
               "error": err}
    out.add("fit.json", _json(summary))
    out.add("beta.csv", _csv(coef_rows_csv(fit.beta, ["j", "coef", "value"])))
    rows = ["lambda1,lambda2,support_func_size,support_scalar_size,objective,kkt_residual,sweeps,combined_error"]
    for f, e in zip(fits, errs):
        rows.append(f"{_f(f.lam1)!r},{_f(f.lam2)!r},{len(f.support_func)},{len(f.support_scalar)},"
                    f"{_f(f.objective_trace[-1])!r},{_f(f.kkt)!r},{f.sweeps},{_f(e['combined'])!r}")
    out.add("path.csv", _csv("\n".join(rows) + "\n"))


def cmd_mc(cfg: dict, seed: Optional[int], out: Outputs, threads: int, records_name: str = "records.csv",
           summary_name: str = "summary.json"):
    if seed is not None:
        cfg = {**cfg, "base_seed": seed}
    study = StudyConfig.from_dict(cfg)
    recs = run_study(study, threads)
    out.add(records_name, records_to_csv(recs))
    out.add(summary_name, summary_json(study, recs) + "\n")


COMMANDS = {"simulate": cmd_simulate, "stability": cmd_stability, "fit-fllr": cmd_fit_fllr,
            "fit-pflr": cmd_fit_pflr, "mc": cmd_mc}


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("HDFTS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HDFTS_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdfts", description="High-dimensional functional time series toolkit")
    ap.add_argument("--version", action="version", version=f"hdfts {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=None,
                        help="output directory (mc: records CSV path or directory)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None, help="work pool size (default: HDFTS_THREADS or cores)")
        sp.add_argument("--verbose", "-v", action="count", default=0)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        cfg = load_config(args.config, args.command)
        if args.command == "mc":
            out_arg = Path(args.out or "records.csv")
            if out_arg.suffix == ".csv":
                out = Outputs(out_arg.parent)
                cmd_mc(cfg, args.seed, out, threads, out_arg.name, out_arg.stem + ".summary.json")
            else:
                out = Outputs(out_arg)
                cmd_mc(cfg, args.seed, out, threads)
        else:
            seed = args.seed if args.seed is not None else cfg.get("seed", 0)
            out = Outputs(Path(args.out or "."))
            COMMANDS[args.command](cfg, seed, out, threads)
        out.commit()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # semantic problems in an otherwise well-formed config
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
