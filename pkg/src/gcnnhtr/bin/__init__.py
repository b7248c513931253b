#!/usr/bin/env python3

"""
    gcnnhtr.bin
    ~~~~~~~~~~~

    Command line tools. ``gcnnhtr`` bundles them as sub-commands::

        gcnnhtr synth-dataset 16 data/
        gcnnhtr train --train data/manifest.tsv --channel-scale 0.125 -o run/
        gcnnhtr evaluate run/best.npz data/manifest.tsv
        gcnnhtr summarize --variant baseline -o baseline.csv
        gcnnhtr augment-preview data/line_00000.pgm preview/

    Failures print ``error[<category>]: <message>`` to stderr and exit
    with the code of the category (see ``gcnnhtr.exc.EXIT_CODES``).

    (c) BSD 3-clause
"""

import sys
import argparse

from . import common
from . import htrtrain, htrevaluate, htrsummarize, htrsynth, htrpreview

from .htrtrain import cli as htrtrain_cli
from .htrevaluate import cli as htrevaluate_cli
from .htrsummarize import cli as htrsummarize_cli
from .htrsynth import cli as htrsynth_cli
from .htrpreview import cli as htrpreview_cli

COMMANDS = {
    "train": htrtrain,
    "evaluate": htrevaluate,
    "summarize": htrsummarize,
    "synth-dataset": htrsynth,
    "augment-preview": htrpreview,
}


def parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="gcnnhtr", description="Gated CNN handwritten text recognition.")
    subparsers = root.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(name, help=module.__doc__, description=module.__doc__)
        module.configure(sub)
        sub.set_defaults(main=module.main)
    return root


def cli(argv=None) -> int:
    args = parser().parse_args(argv)
    return common.run(args.main, args)


if __name__ == "__main__":
    sys.exit(cli() or 0)
