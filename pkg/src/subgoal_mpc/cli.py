"""Command-line interface.

    subgoal-mpc collect        --config cfg.json [--seed N] [--out DIR]
    subgoal-mpc train-diffusion --config cfg.json ...
    subgoal-mpc train-distance  --config cfg.json ...
    subgoal-mpc eval            --config cfg.json ...
    subgoal-mpc demo            [--out DIR] [--seed N]

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import ConfigError, RunConfig


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def demo_config(out_dir: str, seed: int) -> RunConfig:
    """A few-minute end-to-end run on the point-mass trap scene."""
    cfg = RunConfig.from_dict({
        "name": "demo",
        "seed": seed,
        "out_dir": out_dir,
        "env": {"kind": "point_mass", "scene": "u_trap"},
        "collect": {"n_traj": 300, "traj_len": 80},
        "diffusion": {"steps": 800},
        "distance": {"epochs": 10, "batches_per_epoch": 40},
        "eval": {"methods": ["ours", "mppi_only"], "n_cases": 3,
                 "budget": 250, "task": "point_goal"},
    })
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="subgoal-mpc",
        description="Coarse-to-fine diffusion subgoals guiding MPPI")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("collect", "train-diffusion", "train-distance", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
    demo = sub.add_parser("demo", help="small end-to-end run on the trap scene")
    demo.add_argument("--out", default="demo_out")
    demo.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        if args.command == "demo":
            cfg = demo_config(args.out, args.seed)
        else:
            cfg = _load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    try:
        if args.command == "collect":
            pipeline.run_collect(cfg)
        elif args.command == "train-diffusion":
            pipeline.run_train_diffusion(cfg)
        elif args.command == "train-distance":
            pipeline.run_train_distance(cfg)
        elif args.command == "eval":
            pipeline.run_eval(cfg)
        elif args.command == "demo":
            pipeline.run_all(cfg)
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
