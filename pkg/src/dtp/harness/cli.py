"""``dtp`` command line: train, verify, alpha-study, gn-compare.

Exit codes: 0 success, 1 identity/acceptance failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, TrainConfig, load_config
from .experiments import run_experiment, run_train
from .serialization import save_network
from .trainer import TrainingAborted

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def summary_path(out) -> Path:
    """``metrics.jsonl`` -> ``metrics.summary.txt``."""
    out = Path(out)
    return out.with_name(out.stem + ".summary.txt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="metrics.jsonl",
                       help="metrics file (JSON lines); the summary goes next to it")

    p = sub.add_parser("train", help="train a network from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--save-network", metavar="PATH",
                   help="write the trained network in the portable text format")
    common(p)

    p = sub.add_parser("verify", help="check the algebraic identities on a seeded suite")
    p.add_argument("--seed", type=int, default=0)
    common(p)

    for name, text in (("alpha-study", "measure inversion contraction rates"),
                       ("gn-compare", "compare targets with Gauss-Newton steps")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config) if hasattr(args, "config") else TrainConfig()
    except (OSError, ConfigError) as err:
        print(f"dtp: error: {err}", file=sys.stderr)
        return EXIT_USAGE

    seed = getattr(args, "seed", None)
    try:
        if args.command == "train" and args.save_network:
            report, net = run_train(config, args.out)
            if net is not None:
                save_network(net, args.save_network)
        else:
            report = run_experiment(args.command, config, args.out, seed)
    except TrainingAborted as err:
        print(f"dtp: training aborted: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as err:
        print(f"dtp: error: {err}", file=sys.stderr)
        return EXIT_USAGE

    sys.stdout.write(report.summary)
    summary_path(args.out).write_text(report.summary)
    return EXIT_OK if report.ok else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
