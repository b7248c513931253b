#!/usr/bin/env python3

"""Arguments and error reporting shared by the command line tools"""

import sys
import typing
import logging
import argparse
import dataclasses

from ..exc import GcnnHtrError, EXIT_CODES
from ..models import ModelConfig, VARIANTS, ABLATIONS, REFERENCE_VOCAB_SIZE
from ..augment import AugmentConfig, GridConfig


def add_logging_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("-v", "--verbose", action="store_true", help="log every batch")
    group.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")


def setup_logging(args: argparse.Namespace) -> None:
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    if getattr(args, "verbose", False):
        logging.getLogger().setLevel(logging.DEBUG)
    elif getattr(args, "quiet", False):
        logging.getLogger().setLevel(logging.WARNING)
    else:
        logging.getLogger().setLevel(logging.INFO)


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--variant", choices=VARIANTS, help="architecture (default: gcnn)")
    group.add_argument("--ablation", choices=ABLATIONS, help="gcnn ablation (default: none)")
    group.add_argument("--vocab-size", type=int, help="number of symbols without the blank")
    group.add_argument("--blstm-units", type=int, help="hidden units per BLSTM direction")
    group.add_argument("--max-channels", dest="gcnn_max_channels", type=int, help="widest gcnn convolution")
    group.add_argument("--gate-blocks", type=int, help="number of GateBlocks")
    group.add_argument("--dropout", type=float, help="dropout rate")
    group.add_argument("--channel-scale", type=float, help="multiply convolution widths, e.g. 0.125")
    group.add_argument("--norm-kind", choices=("mixed", "batch", "layer"), help="GateBlock normalization")


MODEL_FLAGS = ("variant", "ablation", "vocab_size", "blstm_units", "gcnn_max_channels",
               "gate_blocks", "dropout", "channel_scale", "norm_kind")


def model_overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in MODEL_FLAGS if getattr(args, k, None) is not None}


def model_config(args: argparse.Namespace, base: typing.Optional[ModelConfig]=None) -> ModelConfig:
    data = (base or ModelConfig(vocab_size=REFERENCE_VOCAB_SIZE)).to_dict()
    data.update(model_overrides(args))
    return ModelConfig.from_dict(data)


def add_augment_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("augmentation")
    group.add_argument("--gamma", dest="contrast_gamma", type=float, help="contrast exponent (default: 2.0)")
    group.add_argument("--scale-long", type=float, help="horizontal stretch factor (default: 1.25)")
    group.add_argument("--scale-short", type=float, help="horizontal shrink factor (default: 0.8)")
    group.add_argument("--dilation", type=float, help="dilation element size (default: 3)")


def augment_config(args: argparse.Namespace, base: typing.Optional[AugmentConfig]=None) -> AugmentConfig:
    data = dataclasses.asdict(base or AugmentConfig())
    for key in ("contrast_gamma", "scale_long", "scale_short"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if getattr(args, "dilation", None) is not None:
        data["dilation_width"] = data["dilation_height"] = args.dilation
    return AugmentConfig(**data)


def add_grid_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("grid background")
    group.add_argument("--grid-spacing", type=int, help="pixels between ruling lines (default: 16)")
    group.add_argument("--grid-intensity", type=float, help="gray value of ruling lines (default: 0.6)")
    group.add_argument("--grid-orientation", choices=("horizontal", "both"), help="(default: horizontal)")


def grid_config(args: argparse.Namespace, base: typing.Optional[GridConfig]=None) -> GridConfig:
    data = dataclasses.asdict(base or GridConfig())
    for flag, key in (("grid_spacing", "line_spacing_px"), ("grid_intensity", "line_intensity"),
                      ("grid_orientation", "orientation")):
        if getattr(args, flag, None) is not None:
            data[key] = getattr(args, flag)
    return GridConfig(**data)


def report(exc: GcnnHtrError) -> int:
    """Print `exc` as error[<category>] and return its exit code"""
    print("error[{}]: {}".format(exc.category, exc), file=sys.stderr)
    return EXIT_CODES.get(exc.category, 1)


def run(main: typing.Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    setup_logging(args)
    try:
        return main(args) or 0
    except GcnnHtrError as e:
        return report(e)
