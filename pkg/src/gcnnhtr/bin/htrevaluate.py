#!/usr/bin/env python3

"""Decode a manifest with a checkpoint and report the character error rate"""

import sys
import argparse

from . import common
from ..train import evaluate


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("checkpoint", help="checkpoint written by training (best.npz)")
    parser.add_argument("manifest", help="dataset manifest to decode")
    parser.add_argument("-o", "--hypotheses", help="write reference<TAB>hypothesis lines to this file")
    parser.add_argument("--grid", action="store_true", help="composite grid backgrounds first")
    parser.add_argument("--seed", type=int, default=0, help="seed of the grid phases")
    common.add_grid_arguments(parser)
    common.add_logging_arguments(parser)


def main(args: argparse.Namespace) -> int:
    grid = common.grid_config(args) if args.grid else None
    report = evaluate(args.checkpoint, args.manifest, args.hypotheses, grid, args.seed)
    print(report)
    return 0


def cli() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    configure(parser)
    return common.run(main, parser.parse_args())


if __name__ == "__main__":
    sys.exit(cli() or 0)
