"""Command-line entry point: ``drdecomp {decompose,simulate,calibrate,curves}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 estimation
failure. ``--config FILE`` reads flat ``key = value`` lines whose keys are
flag names (dashes or underscores); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .crossfit import FoldPlan, crossfit_grid
from .dataset import DgpConfig, generate_dgp, load_csv, parse_key_values
from .errors import EstimationError, ValidationError
from .estimators import ALL_STRATEGIES, Reference, Strategy, decompose_grid, delta_obs, make_grid
from .inference import attach_bootstrap, bootstrap_grid
from .nuisance import MISSPECIFICATIONS, GBMParams, NuisanceConfig, calibration_table, fit_nuisance
from .report import dumps_csv, dumps_json, grid_rows
from .simulate import ExperimentSpec, figure1_curves, run_experiment

EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3


def _csv_list(text: str | None) -> list[str]:
    if text is None:
        return []
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _references(text) -> list[Reference]:
    refs = [Reference.parse(t) for t in _csv_list(text)]
    if not refs:
        raise ValidationError("at least one reference is required")
    return sorted(set(refs))


def _strategies(text) -> list[Strategy]:
    sts = [Strategy.parse(t) for t in _csv_list(text)]
    if not sts:
        raise ValidationError("at least one strategy is required")
    return [s for s in ALL_STRATEGIES if s in sts]


def _dgp(text: str, n: int | None, seed: int | None) -> DgpConfig:
    if text == "figure1":
        cfg = DgpConfig.figure1()
    elif Path(text).is_file():
        cfg = DgpConfig.load(text)
    else:
        raise ValidationError(f"--dgp must be 'figure1' or a key = value file, got {text!r}")
    if n is not None:
        cfg = replace(cfg, n=int(n))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def _write(args, text: str) -> None:
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")


def _gbm(args) -> GBMParams:
    return GBMParams(n_trees=args.gbm_trees, max_depth=args.gbm_depth, learning_rate=args.gbm_lr,
                     min_leaf=args.gbm_min_leaf, seed=args.seed)


# subcommands


def cmd_decompose(args) -> int:
    if not args.input or not args.outcome or not args.group:
        raise ValidationError("decompose needs --input, --outcome and --group")
    sample = load_csv(args.input, args.outcome, args.group, _csv_list(args.covariates), _csv_list(args.one_hot))
    refs, sts = _references(args.reference), _strategies(args.strategy)
    engine = args.engine
    specs = make_grid(refs, sts, args.trim, engine, r2_outcome=args.r2_outcome)
    if engine == "ml" and any(t.reference is Reference.POOLED for t in specs):
        specs = [t for t in specs if t.reference is not Reference.POOLED]
    k = args.crossfit_k
    if k is None:
        k = 100 if engine == "ml" else 0
    if k > 0 and args.bootstrap > 0:
        raise ValidationError("--bootstrap and --crossfit-k are mutually exclusive")
    gbm = _gbm(args)
    dobs = delta_obs(sample)
    if k > 0:
        plan = FoldPlan(k, args.crossfit_frac, args.seed)
        results = crossfit_grid(sample, specs, plan, gbm, args.threads)
        mode = "crossfit"
    else:
        results = decompose_grid(sample, specs, gbm)
        mode = "full_sample"
        if engine == "ml":
            # in-sample ML scores are not valid for inference
            results = [r.with_se(None, se_method=None) for r in results]
        if args.bootstrap > 0:
            boot = bootstrap_grid(sample, specs, args.bootstrap, args.seed, gbm, args.threads)
            results = attach_bootstrap(results, boot)
            mode = "bootstrap"

    report = {
        "delta_obs": dobs,
        "n": sample.n, "n0": sample.n0, "n1": sample.n1,
        "covariates": list(sample.feature_names),
        "settings": {
            "engine": engine, "trim": args.trim, "crossfit_k": k, "crossfit_frac": args.crossfit_frac,
            "bootstrap": args.bootstrap, "seed": args.seed, "se_mode": mode, "r2_outcome": args.r2_outcome,
        },
        "results": [r.to_dict() for r in results],
        "diagnostics": [{"reference": int(r.reference), "strategy": r.strategy.value,
                         **{key: val for key, val in r.diagnostics.items()}} for r in results],
    }
    text = dumps_json(report) if args.format == "json" else dumps_csv(grid_rows(results))
    _write(args, text)
    stream = sys.stderr if args.output in (None, "-") else sys.stdout
    print(f"delta_obs = {dobs:.6f}", file=stream)
    return 0


def cmd_simulate(args) -> int:
    cfg = _dgp(args.dgp, args.n, None)
    refs = _references(args.reference if args.reference != "0,1,2,3" else "0,1,2")
    sts = _strategies(args.strategy)
    specs = make_grid(refs, sts, args.trim, args.engine, r2_outcome=args.r2_outcome)
    plan = None
    k = args.crossfit_k if args.crossfit_k is not None else (10 if args.engine == "ml" else 0)
    if k > 0:
        plan = FoldPlan(k, args.crossfit_frac, args.seed)
    spec = ExperimentSpec(cfg, args.reps, tuple(specs), args.misspec, plan, args.seed, _gbm(args))
    rep = run_experiment(spec, threads=args.threads)
    text = dumps_json(rep.to_dict()) if args.format == "json" else dumps_csv(rep.csv_rows())
    _write(args, text)
    return 0


def cmd_calibrate(args) -> int:
    if args.input:
        if not args.group:
            raise ValidationError("calibrate needs --group with --input")
        sample = load_csv(args.input, args.outcome or args.group, args.group, _csv_list(args.covariates),
                          _csv_list(args.one_hot))
    else:
        sample, _ = generate_dgp(_dgp(args.dgp, args.n, args.seed), with_truth=False)
    cfg = NuisanceConfig(engine=args.engine, gbm=_gbm(args))
    pair = fit_nuisance(sample, (), cfg)
    p = pair.predict_propensity(sample.x)
    table = calibration_table(p, sample.d, args.bins)
    if args.format == "json":
        text = dumps_json({"n": sample.n, "engine": args.engine, "bins": [b.to_dict() for b in table]})
    else:
        cols = ["bin_low", "bin_high", "mean_predicted", "empirical_rate", "count"]
        text = dumps_csv([cols, *[[b.to_dict()[c] for c in cols] for b in table]])
    _write(args, text)
    return 0


def cmd_curves(args) -> int:
    cfg = _dgp(args.dgp, None, None)
    rows = figure1_curves(cfg, args.grid, args.trim, long=args.long)
    if args.format == "json":
        text = dumps_json(rows)
    else:
        cols = list(rows[0].keys())
        text = dumps_csv([cols, *[[r[c] for c in cols] for r in rows]])
    _write(args, text)
    return 0


# parser


def _common(p: argparse.ArgumentParser, trim_default):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", help="output path (default: stdout)")
    p.add_argument("--engine", choices=("parametric", "ml"), default="parametric")
    p.add_argument("--trim", type=float, default=trim_default)
    p.add_argument("--gbm-trees", type=int, default=200)
    p.add_argument("--gbm-depth", type=int, default=3)
    p.add_argument("--gbm-lr", type=float, default=0.1)
    p.add_argument("--gbm-min-leaf", type=int, default=10)


def _data_flags(p):
    p.add_argument("--input")
    p.add_argument("--outcome")
    p.add_argument("--group")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--one-hot", default="", help="comma-separated categorical columns")


def _estimator_flags(p):
    p.add_argument("--reference", default="0,1,2,3", help="comma-separated subset of 0,1,2,3")
    p.add_argument("--strategy", default=",".join(s.value for s in ALL_STRATEGIES))
    p.add_argument("--crossfit-k", type=int, default=None)
    p.add_argument("--crossfit-frac", type=float, default=0.5)
    p.add_argument("--r2-outcome", choices=("pooled", "composite"), default="pooled")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drdecomp", description="Doubly robust mean-difference decomposition")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose a CSV data set")
    _data_flags(p)
    _estimator_flags(p)
    _common(p, 0.01)
    p.add_argument("--bootstrap", type=int, default=0, help="pairs bootstrap replications (0 = off)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("simulate", help="Monte Carlo experiment on a synthetic DGP")
    p.add_argument("--dgp", default="figure1")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--misspec", choices=MISSPECIFICATIONS, default="none")
    _estimator_flags(p)
    _common(p, 0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="propensity calibration table")
    _data_flags(p)
    p.add_argument("--dgp", default="figure1")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--bins", type=int, default=10)
    _common(p, None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("curves", help="reference-outcome curves of a DGP")
    p.add_argument("--dgp", default="figure1")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--long", action="store_true", help="tidy x, curve, value rows")
    _common(p, None)
    p.set_defaults(func=cmd_curves, format="csv")
    return parser


def _apply_config(parser, argv):
    args, _ = parser.parse_known_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return parser.parse_args(argv)
    try:
        values = parse_key_values(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.strip().lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise ValidationError(f"unknown config key {key!r}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[dest] = act.type(raw) if act.type else raw
            except ValueError:
                raise ValidationError(f"config key {key!r}: bad value {raw!r}") from None
            if act.choices and defaults[dest] not in act.choices:
                raise ValidationError(f"config key {key!r}: {raw!r} not in {list(act.choices)}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
