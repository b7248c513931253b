#!/usr/bin/env python3

"""Write every augmentation of a line image plus its grid variant"""

import sys
import argparse

from . import common
from ..train import augment_preview


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("image", help="8-bit grayscale PGM line image")
    parser.add_argument("out_dir", help="directory receiving the previews")
    common.add_augment_arguments(parser)
    common.add_grid_arguments(parser)
    common.add_logging_arguments(parser)


def main(args: argparse.Namespace) -> int:
    for path in augment_preview(args.image, args.out_dir, common.augment_config(args), common.grid_config(args)):
        print(path)
    return 0


def cli() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    configure(parser)
    return common.run(main, parser.parse_args())


if __name__ == "__main__":
    sys.exit(cli() or 0)
