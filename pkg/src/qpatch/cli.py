"""``qpatch`` command line: preprocess, train, attack-eval, ablate, report."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import FormatError, QPatchError, TrainingError, UsageError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_TRAINING = 4

COMMANDS = {
    "preprocess": harness.cmd_preprocess,
    "train": harness.cmd_train,
    "attack-eval": harness.cmd_attack_eval,
    "ablate": harness.cmd_ablate,
    "report": harness.cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="qpatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--arm", choices=["baseline", "rqc", "both"])
        p.add_argument("--epsilon", help="comma-separated epsilon list")
        p.add_argument("--scenario", help="whitebox, transfer, or both comma-separated")
        p.add_argument("--out", help="run directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return parser


def _overrides(args):
    over = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        over[key.strip().replace("-", "_")] = value
    if args.seed is not None:
        over["seed"] = str(args.seed)
    if args.arm is not None:
        over["arms"] = args.arm
    if args.epsilon is not None:
        over["epsilons"] = args.epsilon
    if args.scenario is not None:
        over["scenarios"] = args.scenario
    if args.out is not None:
        over["out"] = args.out
    return over


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = harness.load_config(args.config, _overrides(args))
        COMMANDS[args.command](cfg)
    except TrainingError as exc:
        print(f"qpatch: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except FormatError as exc:
        print(f"qpatch: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (UsageError, ValueError) as exc:
        print(f"qpatch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QPatchError, OSError) as exc:
        print(f"qpatch: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
