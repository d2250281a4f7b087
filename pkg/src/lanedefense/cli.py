"""Command line entry point: ``python -m lanedefense <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import ExperimentConfig, Mode, analyze, load_config, run_experiment
from .nets import TrainingError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--episodes", type=int, help="episodes to run")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lanedefense", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="co-train defenders and attacker")
    sub.add_parser("baseline", parents=[common], help="both sides uniformly random")
    ab = sub.add_parser("ablate", parents=[common], help="train one side against a random opponent")
    ab.add_argument("--side", choices=["attacker", "defender"], required=True,
                    help="the side that learns")
    ev = sub.add_parser("eval", parents=[common], help="play saved policies")
    ev.add_argument("--checkpoint", required=True, help="checkpoint file or directory")
    an = sub.add_parser("analyze", parents=[common], help="strategy report from trace files")
    an.add_argument("--traces", required=True, help="directory of ep_<n>.log traces")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.episodes is not None:
        cfg.episodes = args.episodes
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            stats = analyze(args.traces, args.out)
            print(stats.report(f"Strategy frequency ({args.traces})"))
            return 0
        cfg = _config(args)
        if args.command == "train":
            cfg.mode = Mode.COTRAIN
        elif args.command == "baseline":
            cfg.mode = Mode.BASELINE
        elif args.command == "ablate":
            cfg.mode = Mode.ABLATE_DEFENDER if args.side == "defender" else Mode.ABLATE_ATTACKER
        elif args.command == "eval":
            cfg.mode = Mode.EVAL
            cfg.checkpoint = args.checkpoint
        if cfg.out_dir is None:
            cfg.out_dir = str(Path("runs") / f"{cfg.mode.value}_seed{cfg.master_seed}")
        summary = run_experiment(cfg)
    except TrainingError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary.stats.report(f"{cfg.mode.value}: all {summary.stats.n_episodes} games"))
    if summary.final_stats is not None:
        print()
        print(summary.final_stats.report("final policies (evaluation games)"))
    print(f"\noutputs written to {cfg.out_dir} ({summary.wall_clock_seconds:.1f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
