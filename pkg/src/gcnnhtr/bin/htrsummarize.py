#!/usr/bin/env python3

"""Print and export the per-layer parameter counts of an architecture"""

import sys
import argparse

from . import common
from ..train import summarize, summarize_sweep


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-o", "--csv", help="write layer,name,shape,params,share_id rows to this file")
    parser.add_argument("--all", action="store_true",
                        help="totals of every variant and gcnn ablation instead of one layer breakdown; "
                             "--variant and --ablation are ignored")
    common.add_model_arguments(parser)
    common.add_logging_arguments(parser)


def main(args: argparse.Namespace) -> int:
    if args.all:
        args.variant = args.ablation = None
        for row in summarize_sweep(common.model_config(args), args.csv):
            print(row)
        return 0
    summary = summarize(common.model_config(args), args.csv)
    print(summary)
    return 0


def cli() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    configure(parser)
    return common.run(main, parser.parse_args())


if __name__ == "__main__":
    sys.exit(cli() or 0)
