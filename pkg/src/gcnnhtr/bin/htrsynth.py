#!/usr/bin/env python3

"""Generate a synthetic line-image dataset with a manifest"""

import sys
import argparse

from . import common
from ..ctc import Vocabulary
from ..train import synth_dataset


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("count", type=int, help="number of lines to render")
    parser.add_argument("out_dir", help="directory receiving the PGM files and manifest.tsv")
    parser.add_argument("--symbols", default="abcdefghij", help="vocabulary, one codepoint per symbol")
    parser.add_argument("--seed", type=int, default=0, help="seed of texts and per-line jitter")
    parser.add_argument("--glyph-seed", type=int, default=0, help="seed of the glyph shapes")
    parser.add_argument("--min-length", type=int, default=3, help="shortest transcription")
    parser.add_argument("--max-length", type=int, default=8, help="longest transcription")
    parser.add_argument("--augment", action="store_true", help="also write the 6 augmented copies per line")
    common.add_augment_arguments(parser)
    common.add_logging_arguments(parser)


def main(args: argparse.Namespace) -> int:
    vocab = Vocabulary(tuple(args.symbols))
    augment = common.augment_config(args) if args.augment else None
    manifest = synth_dataset(args.count, vocab, args.seed, args.out_dir, args.min_length, args.max_length,
                             args.glyph_seed, augment)
    print(manifest)
    return 0


def cli() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    configure(parser)
    return common.run(main, parser.parse_args())


if __name__ == "__main__":
    sys.exit(cli() or 0)
