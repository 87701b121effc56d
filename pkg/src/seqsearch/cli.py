"""Command-line entry point: ``python3 -m seqsearch <command> ...``.

Exit codes: 0 ok, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("pmr", "sieve", "likelihood", "zq", "xq", "dq")

log = logging.getLogger("seqsearch")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"{what} not found: {path}", EXIT_USAGE)
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} is not valid JSON: {exc}", EXIT_USAGE)


def _write_json(obj, path) -> None:
    from .domain import to_jsonable
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=True))


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------

def _load_data(path):
    """``("market", (market, slog))`` for simulator output or ``("dataset", Dataset)``."""
    d = Path(path)
    mf = d / "manifest.json"
    if not mf.exists():
        raise CliError(f"no manifest.json in {d}", EXIT_DATA)
    manifest = _read_json(mf, "manifest")
    try:
        if "schema" in manifest:
            from .dataset_io import load_dataset
            return "dataset", load_dataset(d)
        from .simulator import load_market
        market, slog = load_market(d)
    except CliError:
        raise
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"cannot load data from {d}: {exc}", EXIT_DATA)
    if slog is None:
        raise CliError("simulated data lacks a search log", EXIT_DATA)
    return "market", (market, slog)


def _pair_tables(kind, data, est: dict):
    if kind == "dataset":
        from .dataset_io import build_pair_tables, eligible_pairs
        pairs = [tuple(p) for p in est.get("pairs", [])] or eligible_pairs(data, est.get("min_impressions", 100))
        tabs = build_pair_tables(data, pairs, mode=est.get("pair_mode", "exactly_one"))
    else:
        from .montecarlo import EstimatorSpec, _pairs
        from .simulator import construct_outcomes
        market, slog = data
        if est.get("pairs"):
            pairs = [tuple(p) for p in est["pairs"]]
        else:
            spec = EstimatorSpec("cli", "pmr", n_pairs=int(est.get("n_pairs", 1)),
                                 pair_rule=est.get("pair_rule", "top"))
            pairs = _pairs(slog, market.n_products, spec, int(est.get("seed", 0)))
        tabs = [construct_outcomes(slog, market, p) for p in pairs]
    if not tabs:
        raise CliError("no pair tables could be built", EXIT_DATA)
    return tabs


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _estimate(method: str, kind: str, data, est: dict):
    """Returns ``(EstimateReport, extra dict)``."""
    from .domain import EstimateReport
    cfg = est.get("config", {})
    if method == "pmr":
        from .pmr import PmrConfig, estimate_pmr
        return estimate_pmr(_pair_tables(kind, data, est), PmrConfig.from_json(cfg)), {}
    if method == "sieve":
        from .sieve_mvd import SieveConfig, estimate_sieve
        fit = estimate_sieve(_pair_tables(kind, data, est), SieveConfig.from_json(cfg))
        return fit.report, {"sieve": fit.sieve.to_json(), "cost_range": list(fit.cost_range),
                            "central_range": list(fit.central_range)}
    if method in ("zq", "dq"):
        from .extensions import ExtensionConfig, estimate_dq, estimate_zq
        ec = ExtensionConfig.from_json(cfg)
        fit = (estimate_zq if method == "zq" else estimate_dq)(_pair_tables(kind, data, est), ec)
        return fit.report, {"sieve": fit.sieve.to_json(), "cost_range": list(fit.cost_range),
                            "central_range": list(fit.central_range)}
    if method == "likelihood":
        if kind != "market":
            raise CliError("likelihood needs full consideration sets (simulated market data)", EXIT_DATA)
        from .likelihood import LikelihoodConfig, SearchData, estimate_likelihood
        market, slog = data
        start = est.get("start")
        return estimate_likelihood(SearchData.from_market(market, slog), LikelihoodConfig.from_json(cfg),
                                   start=None if start is None else np.asarray(start, float)), {}
    if method == "xq":
        if kind != "market":
            raise CliError("xq from the CLI needs simulated market data with xbar", EXIT_DATA)
        from .extensions import MatchingSpec, XqConfig, build_within_pairs, estimate_xq
        from .model_core import MatchValueDist, ginv
        from .sieve_mvd import SieveSpec
        market, slog = data
        fs = est.get("first_stage")
        if fs is None:
            raise CliError("xq needs a first_stage block with b, m and sieve or dist", EXIT_USAGE)
        if "sieve" in fs:
            sv = SieveSpec.from_json(fs["sieve"])
            g = sv.__call__
            offset = sv.offset
        else:
            dist = MatchValueDist.from_json(fs["dist"])
            g = lambda c: ginv(c, dist, extrapolate_high=True)   # noqa: E731
            offset = float(fs.get("offset", 0.0))
        pairs = build_within_pairs(slog, market, fs["b"], fs["m"], g, offset=offset,
                                   x_endog=tuple(est.get("x_endog", ())), z_endog=tuple(est.get("z_endog", ())),
                                   max_per_consumer=est.get("max_per_consumer"), seed=int(est.get("seed", 0)))
        bw = cfg.get("bandwidth")
        xc = XqConfig(matching=MatchingSpec(bandwidth=bw), seed=int(cfg.get("seed", 0)))
        return estimate_xq(pairs, xc), {}
    raise CliError(f"unknown method {method!r}", EXIT_USAGE)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulator import ConfigError, MarketConfig, generate_market, save_market, simulate_search
    obj = _read_json(args.config, "market config")
    try:
        cfg = MarketConfig.from_json(obj)
    except ConfigError as exc:
        raise CliError(f"invalid market config: {exc}", EXIT_USAGE)
    market = generate_market(cfg)
    slog = simulate_search(market)
    out = save_market(market, slog, args.out)
    print(json.dumps({"out": str(out), "config_hash": json.loads((out / "manifest.json").read_text())["config_hash"]}))
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.method not in METHODS:
        raise CliError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}", EXIT_USAGE)
    est = _read_json(args.config, "estimator config") if args.config else {}
    kind, data = _load_data(args.data)
    rep, extra = _estimate(args.method, kind, data, est)
    out = rep.to_json() | extra
    _write_json(out, args.out)
    print(json.dumps({"method": rep.method, "config_hash": rep.config_hash, "coefficients": rep.coefficients}))
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    from .montecarlo import PROFILES, StudyConfig, profile, run_study
    if args.config:
        cfg = StudyConfig.from_json(_read_json(args.config, "study config"))
    else:
        if args.profile not in PROFILES:
            raise CliError(f"unknown profile {args.profile!r}", EXIT_USAGE)
        cfg = profile(args.profile)
    if args.reps is not None:
        from dataclasses import replace
        cfg = replace(cfg, n_reps=int(args.reps))
    table = run_study(cfg, progress=True)
    table.save(args.out)
    print(table.to_csv(), end="")
    return EXIT_OK


def cmd_test_mvd(args) -> int:
    from .model_core import CostOutOfRange, MatchValueDist
    from .sieve_mvd import SieveSpec, default_grid, rank_candidates
    fitted = _read_json(args.fitted, "fitted sieve")
    spec = SieveSpec.from_json(fitted.get("sieve", fitted))
    cands_obj = _read_json(args.candidates, "candidates")
    cands = [MatchValueDist.from_json(c) for c in (cands_obj.get("candidates", cands_obj)
                                                   if isinstance(cands_obj, dict) else cands_obj)]
    if args.grid:
        lo, hi, n = args.grid.split(",")
        grid = np.exp(np.linspace(np.log(float(lo)), np.log(float(hi)), int(n)))
    elif "central_range" in fitted:
        lo, hi = fitted["central_range"]
        grid = np.exp(np.linspace(np.log(lo), np.log(hi), 100))
    elif "cost_range" in fitted:
        grid = default_grid(fitted["cost_range"])
    else:
        raise CliError("no evaluation grid: pass --grid lo,hi,n", EXIT_USAGE)
    try:
        reps = rank_candidates(cands, spec, grid, threshold=args.threshold,
                               fitted_range=tuple(fitted["cost_range"]) if "cost_range" in fitted else None)
    except CostOutOfRange as exc:
        raise CliError(str(exc), EXIT_DATA)
    from .domain import SPEC_VERSION, config_hash
    out = {"spec_version": SPEC_VERSION, "ranking": [r.candidate.label for r in reps],
           "reports": [r.to_json() for r in reps],
           "config_hash": config_hash({"fitted": fitted, "candidates": cands_obj, "grid": grid.tolist(),
                                       "threshold": args.threshold})}
    _write_json(out, args.out)
    print(json.dumps({"ranking": out["ranking"], "l2": [r.l2 for r in reps]}))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .inference import SubsampleConfig, subsample_inference
    if args.method not in ("pmr", "sieve"):
        raise CliError("infer supports --method pmr or sieve", EXIT_USAGE)
    est = _read_json(args.config, "estimator config") if args.config else {}
    sub = SubsampleConfig.from_json(_read_json(args.subsample, "subsample config")) if args.subsample else SubsampleConfig()
    if args.threads and sub.n_jobs == 1:
        from dataclasses import replace
        sub = replace(sub, n_jobs=int(args.threads))
    kind, data = _load_data(args.data)
    tabs = _pair_tables(kind, data, est)
    cfg = est.get("config", {})
    if args.method == "pmr":
        from .pmr import PmrConfig, estimate_pmr
        pc = PmrConfig.from_json(cfg)
        estimator = lambda t: estimate_pmr(t, pc)      # noqa: E731
    else:
        from .sieve_mvd import SieveConfig, estimate_sieve
        sc = SieveConfig.from_json(cfg)
        estimator = lambda t: estimate_sieve(t, sc).report   # noqa: E731
    res = subsample_inference(estimator, tabs, sub)
    _write_json(res.to_json(), args.out)
    print(json.dumps({k: v for k, v in res.to_json()["coefficients"].items()}))
    return EXIT_OK


def cmd_ginv_compare(args) -> int:
    from .model_core import MatchValueDist
    from .montecarlo import export_ginv_comparison
    t = MatchValueDist.from_json(json.loads(args.true))
    m = MatchValueDist.from_json(json.loads(args.misspecified))
    lo, hi = (float(v) for v in args.cost_range.split(","))
    res = export_ginv_comparison(t, m, (lo, hi), args.out, median_cost=args.median_cost)
    print(json.dumps({"slope_true": res.slope_true, "slope_misspecified": res.slope_misspecified,
                      "median_cost": res.median_cost}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqsearch", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one market and its search log")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="run one estimator")
    s.add_argument("--method", required=True, help="|".join(METHODS))
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("montecarlo", help="run a Monte Carlo study")
    s.add_argument("--profile", default="table1-desk")
    s.add_argument("--config", default=None, help="study config JSON (overrides --profile)")
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("test-mvd", help="compare candidate match value distributions with a fitted sieve")
    s.add_argument("--fitted", required=True)
    s.add_argument("--candidates", required=True)
    s.add_argument("--grid", default=None, help="lo,hi,n (log-spaced costs)")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_test_mvd)

    s = sub.add_parser("infer", help="subsampling confidence intervals")
    s.add_argument("--method", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--subsample", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ginv-compare", help="export G^-1 curves of two distributions")
    s.add_argument("--true", required=True, help="distribution JSON")
    s.add_argument("--misspecified", required=True, help="distribution JSON")
    s.add_argument("--cost-range", required=True, help="lo,hi")
    s.add_argument("--median-cost", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ginv_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        os.environ["NUMBA_NUM_THREADS"] = str(args.threads)
        os.environ["OMP_NUM_THREADS"] = str(args.threads)
    args.threads_value = args.threads
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "code": exc.code}), file=sys.stderr)
        return exc.code
    except Exception as exc:
        code = _classify(exc)
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}", "code": code}), file=sys.stderr)
        return code


def _classify(exc: Exception) -> int:
    from .inference import SubsampleFailure
    from .model_core import CostOutOfRange
    from .montecarlo import StudyAborted
    from .pmr import InsufficientData
    from .simulator import ConfigError
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, (InsufficientData, CostOutOfRange)):
        return EXIT_DATA
    if isinstance(exc, (SubsampleFailure, StudyAborted, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_USAGE
    return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
