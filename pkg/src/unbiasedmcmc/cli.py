"""Command-line interface.

Subcommands::

    ubmcmc meetings     --config cfg.json [--seed N] [--workers M] [--out DIR]
    ubmcmc estimate     --config cfg.json ...
    ubmcmc tune         --config cfg.json ...
    ubmcmc tv-bounds    --config cfg.json ...
    ubmcmc w1-bounds    --config cfg.json ...
    ubmcmc avar         --config cfg.json ...
    ubmcmc inefficiency --config cfg.json ...

The config is a JSON file (see README for the schema); ``--seed``,
``--workers`` and ``--out`` override the corresponding config entries.  The
master seed is recorded in every output file's manifest.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, ExperimentConfig
from . import runner

__all__ = ["main"]

_COMMANDS = ("meetings", "estimate", "tune", "tv-bounds", "w1-bounds", "avar", "inefficiency")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubmcmc",
        description="Unbiased MCMC from coupled lagged chains: estimation, "
                    "convergence bounds, tuning, and replicate-level parallelism.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON config file")
        cmd.add_argument("--seed", type=int, default=None, help="override the master seed")
        cmd.add_argument("--workers", type=int, default=None, help="override the worker count")
        cmd.add_argument("--out", default=None, help="override the output directory")
    return parser


def _load_config(args) -> ExperimentConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.out is not None:
        raw["out_dir"] = args.out
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "meetings":
            summary = runner.run_meetings(config)
            print(f"meetings: {summary['met']} met, {summary['unmet']} capped "
                  f"(lag={summary['lag']}) -> {summary['out_dir']}")
        elif args.command == "estimate":
            report = runner.run_experiment(config)
            for name, agg in report["estimates"].items():
                if agg is None:
                    print(f"{name}: no usable replicates")
                else:
                    print(f"{name}: mean={agg['mean']:.6g} "
                          f"ci=[{agg['ci_low']:.6g}, {agg['ci_high']:.6g}] "
                          f"cost={agg['mean_cost']:.1f} inefficiency={agg['inefficiency']:.6g}")
            print(f"k={report['k']} lag={report['lag']} ell={report['ell']} "
                  f"unmet={report['unmet']}")
        elif args.command == "tune":
            advice = runner.run_tune(config)
            print(f"tuned: k={advice['k']} lag={advice['lag']} ell={advice['ell']} "
                  f"(quantile {advice['quantile_level']}, pilot {advice['pilot_replicates']})")
        elif args.command in ("tv-bounds", "w1-bounds"):
            metric = "tv" if args.command == "tv-bounds" else "w1"
            summary = runner.run_bounds(config, metric)
            for lag, info in summary["curves"].items():
                print(f"{metric} lag={lag}: bound reaches 0 at k={info['k_zero']}")
        elif args.command == "avar":
            payload = runner.run_avar(config)
            print(f"asymptotic variance of {payload['h']}: {payload['mean']:.6g} "
                  f"+/- {payload['stderr']:.3g} ({payload['copies']} copies)")
        elif args.command == "inefficiency":
            summary = runner.run_inefficiency_sweep(config)
            print(f"sweep over k={summary['k_values']} done; reference "
                  f"asymptotic variance {summary['reference_avar']:.6g} "
                  f"-> {summary['out_dir']}")
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
