"""Command-line entry point: ``stableinf <command> [flags]``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import tomli

from . import synth
from .config import PipelineConfig, derive_seed, load_config
from .errors import ConfigError, DataError
from .pipeline import Pipeline

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _grid_item(text: str):
    key, sep, values = text.partition("=")
    if not sep or not values:
        raise argparse.ArgumentTypeError(f"expected KEY=V1,V2 but got {text!r}")
    out = []
    for v in values.split(","):
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                raise argparse.ArgumentTypeError(f"grid value {v!r} is not a number") from None
    return key.strip(), out


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="TOML file; flags given here override its values")
    g.add_argument("--data-dir", help="directory holding events.jsonl and follows/ (default: data)")
    g.add_argument("--events", help="retweet events file, JSONL or CSV (default: <data-dir>/events.jsonl)")
    g.add_argument("--follows", help="directory of follows_YYYY-MM.csv snapshots (default: <data-dir>/follows)")
    g.add_argument("--out-dir", help="artifact root; runs land in <out-dir>/<run-id>/ (default: out)")
    g.add_argument("--train-ref", help="reference month YYYY-MM of the training cohort "
                                       "(default: first month with a full lookback)")
    g.add_argument("--eval-ref", help="optional later cohort YYYY-MM, at least m months after --train-ref")
    g.add_argument("--kind", help="comma list of spreader,broker (default: both)")
    g.add_argument("--features", help="comma list of feature sets: all, follow, rt, score-only, "
                                      "spreader-score-only, broker-score-only, or category sets like Follow+RT")
    g.add_argument("--m", type=int, help="months a user must stay on top to count as stable (default: 6)")
    g.add_argument("--n", type=int, help="lookback months of features (default: 4)")
    g.add_argument("--m-values", help="comma list of m values for the m sweep (default: 2,3,4,5,6)")
    g.add_argument("--n-values", help="comma list of n values for the n sweep (default: 1,2,3,4)")
    g.add_argument("--fraction", type=float, help="top share of active users that counts as influential (default: 0.10)")
    g.add_argument("--both-change-rates", action="store_true", default=None,
                   help="add the change rate of the other kind as well")
    g.add_argument("--seed", type=int, help="master seed; stage seeds are derived from it (default: 0)")
    g.add_argument("--train-fraction", type=float, help="train share of the stratified split (default: 0.7)")
    g.add_argument("--cv-folds", type=int, help="cross-validation folds (default: 5)")
    g.add_argument("--grid", action="append", type=_grid_item, metavar="KEY=V1,V2",
                   help="override one hyper-parameter axis, e.g. n_trees=100,300; repeatable")
    g.add_argument("--importance-repeats", type=int, help="shuffles per column (default: 30)")
    g.add_argument("--importance-rows", choices=("test", "train"), help="rows used for importance (default: test)")
    g.add_argument("--workers", type=int, help="worker threads for model fitting; results do not depend on it")
    g.add_argument("--plot-data", action="store_true", default=None,
                   help="also write reports/plot_data.csv with (figure, x, y, series) rows")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stableinf", description="Stable influencer detection over retweet cascades.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset with planted stable influencers")
    p.add_argument("--config", help="TOML file; its [synth] table sets generator parameters")
    p.add_argument("--data-dir", help="output directory (default: data)")
    p.add_argument("--seed", type=int, help="generator seed (default: 0)")
    p.add_argument("--users", type=int, help="number of users (default: 5000)")
    p.add_argument("--months", type=int, help="number of months, at least 13 (default: 13)")
    p.add_argument("--start", help="first month YYYY-MM (default: 2021-10)")
    p.add_argument("--rho", type=float, help="month-to-month persistence of latent influence (default: 0.9)")
    p.add_argument("--spike-prob", type=float, help="monthly spike probability of temporal users")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="any other generator parameter, e.g. cascade_cap=200; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    stages = {
        "score": "monthly and half-month score tables, networks and node metrics",
        "label": "stable/temporal labels and persistence curves",
        "features": "feature matrices for each kind and feature set",
        "train": "grid-searched gradient-boosted models",
        "eval": "AUC, accuracy and the score baseline on held-out users",
        "importance": "permutation importance of the all-features models",
        "sweep": "labeling-period (m) and feature-window (n) sweeps",
        "run": "every stage from score to sweep in one process",
    }
    for name, text in stages.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "sweep":
            p.add_argument("--which", choices=("m", "n", "both"), default="both", help="sweeps to run (default: both)")
        if name == "importance":
            p.add_argument("--on-features", default="all", help="feature set whose model is inspected (default: all)")
    return parser


_FLAG_TO_FIELD = {"kind": "kinds", "features": "feature_sets"}


def _pipeline_config(args):
    overrides = {}
    names = {f.name for f in fields(PipelineConfig)}
    for key, value in vars(args).items():
        field_name = _FLAG_TO_FIELD.get(key, key)
        if field_name in names and field_name != "grid":
            overrides[field_name] = value
    cfg = load_config(args.config, overrides)
    if args.grid:
        grid = dict(cfg.grid)
        for key, values in args.grid:
            if key not in grid:
                raise ConfigError(f"unknown grid key {key!r}; choose from {sorted(grid)}")
            grid[key] = values
        cfg.grid = grid
        cfg.validate()
    return cfg


def _synth(args) -> dict:
    params: dict = {}
    data_dir = "data"
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomli.loads(path.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        params.update(doc.get("synth", {}))
        data_dir = doc.get("data_dir", data_dir)
    known = {f.name: f for f in fields(synth.SynthConfig)}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or key not in known:
            raise ConfigError(f"--set expects KEY=VALUE with KEY among {sorted(known)}; got {item!r}")
        kind = type(getattr(synth.SynthConfig(), key))
        try:
            params[key] = kind(value)
        except ValueError:
            raise ConfigError(f"--set {key}: {value!r} is not a valid {kind.__name__}") from None
    flags = {"seed": args.seed, "n_users": args.users, "n_months": args.months, "start": args.start,
             "rho": args.rho, "spike_prob": args.spike_prob}
    params.update({k: v for k, v in flags.items() if v is not None})
    unknown = set(params) - set(known)
    if unknown:
        raise ConfigError(f"unknown synth keys {sorted(unknown)}")
    try:
        cfg = synth.SynthConfig(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.data_dir or data_dir)
    summary = synth.generate(cfg, out)
    return {"data_dir": str(out), **summary}


def _stage(args) -> dict:
    cfg = _pipeline_config(args)
    pipe = Pipeline(cfg)
    cmd = args.command
    if cmd == "score":
        result = pipe.score()
    elif cmd == "label":
        result = pipe.label()
    elif cmd == "features":
        result = pipe.features()
    elif cmd == "train":
        result = pipe.train()
    elif cmd == "eval":
        result = pipe.evaluate()
    elif cmd == "importance":
        result = pipe.importance(args.on_features)
    elif cmd == "sweep":
        result = pipe.sweep(args.which)
    else:
        result = pipe.run_all()
    if cfg.plot_data and cmd != "run":
        pipe.plot_data()
    pipe.update_manifest()
    return {"run_dir": str(pipe.root), "seed_split": derive_seed(cfg.seed, "split"), "result": result}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        summary = _synth(args) if args.command == "synth" else _stage(args)
    except ConfigError as exc:
        print(f"stableinf {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"stableinf {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        logging.getLogger(__name__).debug("failure", exc_info=True)
        print(f"stableinf {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"command": args.command, "status": "ok", **summary}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
