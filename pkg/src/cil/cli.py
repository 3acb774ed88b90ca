"""Command-line interface.

Three subcommands: ``features`` (association feature extraction),
``fit`` (full pipeline on a CSV dataset driven by an INI config) and
``simulate`` (named simulation scenarios). Exit codes: 0 success, 2 usage
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from ._version import __version__
from .data import DataError, PriorSpec
from .features import extract_features
from .io import (
    dataset_from_csv,
    draws_to_csv,
    features_to_csv,
    inference_to_csv,
    standard_header,
)
from .marglik import RankDeficientError
from .optimize import BfgsConfig
from .sampler import save_sample_set
from .simulate import SCENARIOS, HarnessOptions, run_experiment, scenario
from .workflow import FitConfig, run_fit

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _split_names(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cil", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cil {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract treatment-control association features")
    p.add_argument("data", help="input CSV with a header row")
    p.add_argument("--treatments", required=False, help="comma-separated treatment columns")
    p.add_argument("--outcome", help="outcome column (excluded from the default control set)")
    p.add_argument("--controls", help="comma-separated control columns (default: all others)")
    p.add_argument("--method", default="lasso_bic", choices=["lasso_bic", "ridge"])
    p.add_argument("--family", default=None, help="gaussian|binomial, default per treatment")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("fit", help="full fit: features, hyperparameter learning, inference")
    p.add_argument("data", help="input CSV with a header row")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--theta-mode", choices=["ep", "eb"], help="override the config")
    p.add_argument("--prior", choices=["cil", "betabinomial", "uniform"], help="override the config")
    p.add_argument("--seed", type=int, default=None, help="override the config")
    p.add_argument("--save-draws", action="store_true", help="also write the raw draws CSV")

    p = sub.add_parser("simulate", help="run a named simulation scenario")
    p.add_argument("scenario", choices=list(SCENARIOS))
    p.add_argument("--alpha", type=float, default=None, help="restrict fig1 to one effect size")
    p.add_argument("--R", type=int, default=None, help="replicates per cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default=None, help="comma-separated method subset")
    p.add_argument("--iterations", type=int, default=None, help="sampler sweeps per run")
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--n-draws", type=int, default=None)
    p.add_argument("--workers", type=int, default=0, help="0 = all available cores")
    p.add_argument("--out", required=True, help="output path prefix")
    return parser


def cmd_features(args) -> int:
    if not args.treatments:
        raise UsageError("--treatments is required")
    data = dataset_from_csv(
        args.data,
        outcome=args.outcome,
        treatments=_split_names(args.treatments),
        controls=_split_names(args.controls),
        standardize=not args.no_standardize,
    )
    F = extract_features(data, method=args.method, families=args.family)
    header = standard_header(
        "features",
        args.seed,
        [
            ("input", os.path.basename(args.data)),
            ("method", args.method),
            ("standardize", str(not args.no_standardize).lower()),
        ],
    )
    features_to_csv(F, data, args.out, header)
    print(f"wrote {args.out} ({F.J} controls x {F.T} treatments)")
    return EXIT_OK


def _read_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file {path} not found")
        cfg.read(path)
    return cfg


def _spec_from_config(cfg: configparser.ConfigParser) -> PriorSpec:
    sec = cfg["prior"] if cfg.has_section("prior") else {}
    get = lambda key, default: sec.get(key, default) if hasattr(sec, "get") else default
    rho_raw = str(get("rho", "auto")).strip().lower()
    try:
        return PriorSpec(
            tau=float(get("tau", 0.348)),
            rho=None if rho_raw in ("auto", "none", "") else float(rho_raw),
            a_phi=float(get("a_phi", 0.01)),
            b_phi=float(get("b_phi", 0.01)),
            treat_incl=float(get("treat_incl", 0.5)),
            model_prior=str(get("model_prior", "cil")).strip().lower(),
            bb_a=float(get("bb_a", 1.0)),
            bb_b=float(get("bb_b", 1.0)),
            include_intercept=str(get("include_intercept", "true")).strip().lower()
            not in ("false", "0", "no"),
        )
    except ValueError as exc:
        raise UsageError(f"bad [prior] config: {exc}") from exc


def _fit_config_from(cfg: configparser.ConfigParser, args) -> FitConfig:
    def get(section, key, default):
        if cfg.has_section(section) and key in cfg[section]:
            return cfg[section][key]
        return default

    group_raw = get("theta", "groups", "")
    group_map = None
    if str(group_raw).strip():
        group_map = tuple(int(v) - 1 for v in str(group_raw).split(","))
        if min(group_map) < 0:
            raise UsageError("groups are 1-based")
    levels = tuple(
        float(v) for v in str(get("inference", "levels", "0.5,0.9,0.95")).split(",") if v.strip()
    )
    seed = args.seed if args.seed is not None else int(get("run", "seed", 0))
    mode = args.theta_mode or str(get("theta", "mode", "eb")).strip().lower()
    try:
        return FitConfig(
            feature_method=str(get("features", "method", "lasso_bic")).strip().lower(),
            families=(lambda f: None if f in ("", "auto") else f)(
                str(get("features", "family", "auto")).strip().lower()
            ),
            max_normalize_features=str(get("features", "normalize", "false")).strip().lower()
            in ("true", "1", "yes"),
            theta_mode=mode,
            group_map=group_map,
            iterations=int(get("search", "iterations", 10_000)),
            burn_in=int(get("search", "burn_in", 1_000)),
            n_draws=int(get("inference", "n_draws", 5_000)),
            levels=levels,
            grid_lo=int(get("theta", "grid_lo", -10)),
            grid_hi=int(get("theta", "grid_hi", 10)),
            grid_max_evals=int(get("theta", "grid_max_evals", 100_000)),
            bfgs=BfgsConfig(
                max_iter=int(get("theta", "bfgs_max_iter", 200)),
                grad_tol=float(get("theta", "bfgs_grad_tol", 1e-6)),
            ),
            standardize=str(get("run", "standardize", "true")).strip().lower()
            not in ("false", "0", "no"),
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from exc


def cmd_fit(args) -> int:
    cfg = _read_config(args.config)
    spec = _spec_from_config(cfg)
    if args.prior:
        spec = PriorSpec(
            tau=spec.tau, rho=spec.rho, a_phi=spec.a_phi, b_phi=spec.b_phi,
            treat_incl=spec.treat_incl, model_prior=args.prior,
            bb_a=spec.bb_a, bb_b=spec.bb_b, include_intercept=spec.include_intercept,
        )
    fconf = _fit_config_from(cfg, args)

    roles = cfg["data"] if cfg.has_section("data") else {}
    data = dataset_from_csv(
        args.data,
        outcome=roles.get("outcome") if hasattr(roles, "get") else None,
        treatments=_split_names(roles.get("treatments") if hasattr(roles, "get") else None),
        controls=(lambda v: None if v in (None, "", "*") else _split_names(v))(
            roles.get("controls") if hasattr(roles, "get") else None
        ),
    )

    result = run_fit(data, spec, fconf)
    config_echo = [
        ("model_prior", spec.model_prior),
        ("theta_mode", fconf.theta_mode),
        ("iterations", fconf.iterations),
        ("burn_in", fconf.burn_in),
        ("n_draws", fconf.n_draws),
        ("standardize", fconf.standardize),
    ]
    header = standard_header("inference", fconf.seed, config_echo)
    inference_to_csv(result.inference, data.treatment_names, f"{args.out}_inference.csv", header)
    save_sample_set(result.samples, f"{args.out}_models.txt")
    if result.theta_fit is not None:
        result.theta_fit.write_report(
            f"{args.out}_theta.txt",
            header_lines=[f"version: {__version__}", f"seed: {fconf.seed}"],
        )
    if args.save_draws:
        draws_to_csv(result.inference, data.treatment_names, f"{args.out}_draws.csv", header)

    for t, name in enumerate(data.treatment_names[: min(data.T, 10)]):
        est = result.inference.alpha_hat[t]
        incl = result.inference.inclusion[t]
        print(f"{name}: estimate {est:.4f} (inclusion {incl:.3f})")
    print(f"wrote {args.out}_inference.csv")
    return EXIT_OK


def cmd_simulate(args) -> int:
    designs, default_methods = scenario(args.scenario, alpha=args.alpha, R=args.R, seed=args.seed)
    methods = _split_names(args.methods) or default_methods
    opts = HarnessOptions()
    if args.iterations or args.burn_in or args.n_draws:
        opts = HarnessOptions(
            iterations=args.iterations or opts.iterations,
            burn_in=args.burn_in if args.burn_in is not None else opts.burn_in,
            n_draws=args.n_draws or opts.n_draws,
        )
    workers = args.workers if args.workers > 0 else (os.cpu_count() or 1)
    report = run_experiment(
        designs, methods, R=args.R, seed=args.seed, workers=workers, options=opts
    )
    config_echo = [
        ("scenario", args.scenario),
        ("methods", ",".join(report.methods)),
        ("R", args.R if args.R is not None else "per-design"),
        ("iterations", opts.iterations),
        ("burn_in", opts.burn_in),
        ("n_draws", opts.n_draws),
        ("workers", workers),
    ]
    from .io import write_csv_with_header

    header = standard_header("simulation", args.seed, config_echo)
    write_csv_with_header(report.records, f"{args.out}_records.csv", header)
    write_csv_with_header(report.summary, f"{args.out}_summary.csv", header)
    write_csv_with_header(report.plot_data(), f"{args.out}_plotdata.csv", header)
    print(report.summary.to_string(index=False))
    print(f"wrote {args.out}_records.csv, {args.out}_summary.csv, {args.out}_plotdata.csv")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses its own exit codes
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        if args.command == "features":
            return cmd_features(args)
        if args.command == "fit":
            return cmd_fit(args)
        return cmd_simulate(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankDeficientError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
