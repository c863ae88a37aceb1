"""``coinflip`` command line.

Exit codes: 0 on success, 1 on a validation error (bad config, bad
arguments), 2 when training diverges.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from coinflip.errors import CoinFlipError, InvalidArgumentError, TrainingDivergedError
from coinflip.harness.config import KINDS, config_from_dict, load_config
from coinflip.harness.runs import run_experiment

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with "diverged"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coinflip", description="Coin-flip pseudocount experiments.")
    sub = parser.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="JSON config file (its kind must match the subcommand)")
        p.add_argument("--seed", type=int, help="first seed")
        p.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed (default 0)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--steps", type=int, help="total environment steps per run")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def resolve_config(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                load_config(args.config)  # re-raises as InvalidArgumentError
                raise
        if data.get("kind", args.kind) != args.kind:
            raise InvalidArgumentError(f"config kind {data.get('kind')!r} does not match subcommand {args.kind!r}")
    else:
        data = {}
    data["kind"] = args.kind
    if args.seeds is not None:
        if args.seeds < 1:
            raise InvalidArgumentError("--seeds must be >= 1")
        start = args.seed if args.seed is not None else 0
        data["seeds"] = list(range(start, start + args.seeds))
    elif args.seed is not None:
        data["seeds"] = [args.seed]
    if args.out is not None:
        data["out_dir"] = args.out
    if args.steps is not None:
        data["total_steps"] = args.steps
    return config_from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        config = resolve_config(args)
        summary = run_experiment(config)
    except TrainingDivergedError as exc:
        print(f"coinflip: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CoinFlipError, ValueError, KeyError, OSError) as exc:
        print(f"coinflip: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
