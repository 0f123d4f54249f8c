"""Command line entry point: ``arpex <command> [options]``.

Every command writes a CSV whose first line is a version comment, then a
header row.  ``--config`` reads a YAML file whose keys override defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

import numpy as np
import yaml

from . import bench
from .ar_core import ArModel, acf, alpha_for_rho1, realize
from .trainer import TrainConfig


def _model(args) -> ArModel:
    alpha = args.alpha if args.alpha is not None else alpha_for_rho1(args.p, args.rho1)
    return ArModel.binomial(args.p, alpha)


def cmd_noise(args):
    model = _model(args)
    rng = np.random.default_rng(args.seed)
    x = realize(model, rng.standard_normal(args.steps))
    rows = [{"t": t, "x": v} for t, v in enumerate(x)]
    bench.write_csv(args.out, rows, ["t", "x"])


def cmd_acf(args):
    table = acf(_model(args), args.max_lag)
    rows = [{"lag": k, "rho": r} for k, r in enumerate(table.rho)]
    bench.write_csv(args.out, rows, ["lag", "rho"])


def cmd_explore(args):
    reports = bench.run_exploration(args.rates, args.policies, args.budget, seeds=range(args.seed, args.seed + args.seeds), sigma_scale=args.sigma_scale)
    rows = [asdict(r) for r in reports]
    cols = ["action_rate", "policy", "sigma_scale", "total_sim_seconds", "episodes_completed", "episodes_timed_out", "mean_time", "median_time", "censored"]
    bench.write_csv(args.out, rows, cols)
    for r in reports:
        print(f"{r.action_rate:6g} Hz  {r.policy:12s}  mean {r.mean_time:8.1f} s  ({r.episodes_completed} reached, {r.episodes_timed_out} timed out)")


def cmd_trajectories(args):
    rows = []
    for spec in args.policies:
        for row in bench.run_trajectories(args.rate, spec, args.duration, args.runs, args.seed, args.sigma_scale):
            rows.append({"policy": spec, **row})
    bench.write_csv(args.out, rows, ["policy", "run", "t", "x", "y"])


def cmd_learn(args):
    overrides = _load_config(args.config)
    overrides.update(action_rate=args.rate)
    if args.sim_seconds is not None:
        overrides["total_sim_seconds"] = args.sim_seconds
    config = TrainConfig(**overrides)
    runs = bench.run_learning(args.rate, args.policy, config.total_sim_seconds, seeds=range(args.seed, args.seed + args.seeds), config=config, eval_episodes=args.eval_episodes)
    bench.write_csv(args.out, bench.learning_curve_rows(runs), ["sim_seconds", "mean_return", "mean_ep_len", "kl", "clipfrac", "explained_var"])
    for r in runs:
        print(f"seed {r.seed}: initial {r.initial_eval:.1f}  final {r.final_eval:.1f}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"{path}: expected a mapping")
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arpex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out)
        p.add_argument("--config", default=None, help="YAML file of overrides")

    def process(p):
        p.add_argument("--p", type=int, default=3)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--alpha", type=float, default=None)
        g.add_argument("--rho1", type=float, default=0.9)

    p = sub.add_parser("noise", help="realization of an AR process")
    common(p, "noise.csv")
    process(p)
    p.add_argument("--steps", type=int, default=1000)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("acf", help="autocorrelation table")
    common(p, "acf.csv")
    process(p)
    p.add_argument("--max-lag", type=int, default=100)
    p.set_defaults(func=cmd_acf)

    p = sub.add_parser("explore", help="time-to-target of random agents")
    common(p, "explore.csv")
    p.add_argument("--rates", type=float, nargs="+", default=list(bench.DEFAULT_RATES))
    p.add_argument("--policies", nargs="+", default=list(bench.DEFAULT_SPECS))
    p.add_argument("--budget", type=float, default=1e5, help="simulated seconds per cell and seed")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("trajectories", help="fixed-length random-agent paths")
    common(p, "trajectories.csv")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--policies", nargs="+", default=["gaussian", "arp:3:0.8"])
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_trajectories)

    p = sub.add_parser("learn", help="train with the clipped surrogate objective")
    common(p, "learn.csv")
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--policy", default="arp:3:0.9")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--sim-seconds", type=float, default=None)
    p.add_argument("--eval-episodes", type=int, default=32)
    p.set_defaults(func=cmd_learn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command != "learn" and args.config is not None:
        for key, value in _load_config(args.config).items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise SystemExit(f"unknown config key {key!r} for {args.command}")
            setattr(args, attr, value)
    try:
        args.func(args)
    except ValueError as exc:
        print(f"arpex: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
