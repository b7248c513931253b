#!/usr/bin/env python3

"""Train a recognizer on a dataset manifest"""

import sys
import argparse
import dataclasses

from . import common
from ..train import TrainConfig, Trainer, THRESHOLD_FACTOR


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="YAML TrainConfig; flags override its values")
    parser.add_argument("--train", dest="train_manifest", help="training manifest")
    parser.add_argument("--val", dest="val_manifest", help="validation manifest (default: training set)")
    parser.add_argument("--test", dest="test_manifest", help="test manifest, decoded with the best checkpoint after training")
    parser.add_argument("--batch-size", type=int, help="lines per Adam step (default: 8)")
    parser.add_argument("--epochs", dest="max_epochs", type=int, help="maximum number of epochs (default: 100)")
    parser.add_argument("--patience", type=int, help="stop after this many epochs without improvement")
    parser.add_argument("--seed", type=int, help="seed of initialization, shuffling and dropout")
    parser.add_argument("--lr", type=float, help="Adam learning rate (default: 1e-4)")
    parser.add_argument("--augment", action="store_true", default=None, help="train on the 7x augmented set")
    parser.add_argument("--grid", action="store_true", default=None, help="composite grid backgrounds")
    parser.add_argument("-o", "--checkpoint-dir", help="directory for checkpoints, run.csv and hypotheses")
    parser.add_argument("--loader-threads", type=int, help="preprocessing threads (0: deterministic)")
    common.add_model_arguments(parser)
    common.add_augment_arguments(parser)
    common.add_grid_arguments(parser)
    common.add_logging_arguments(parser)


TRAIN_FLAGS = ("train_manifest", "val_manifest", "test_manifest", "batch_size", "max_epochs", "patience",
               "seed", "lr", "augment", "checkpoint_dir", "loader_threads")


def train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig.from_yaml(args.config) if args.config else TrainConfig()
    changes = {k: getattr(args, k) for k in TRAIN_FLAGS if getattr(args, k, None) is not None}
    changes["model"] = common.model_config(args, cfg.model)
    changes["augment_config"] = common.augment_config(args, cfg.augment_config)
    if args.grid or cfg.grid_background is not None:
        changes["grid_background"] = common.grid_config(args, cfg.grid_background)
    return dataclasses.replace(cfg, **changes)


def main(args: argparse.Namespace) -> int:
    trainer = Trainer(train_config(args))
    best = trainer.run().best()
    print("best epoch {}: CER {:.2f}%".format(best.epoch, best.val_cer))
    print("within {}% of the best CER after {:.1f}s".format(
        round(100 * (THRESHOLD_FACTOR - 1)), trainer.seconds_to_threshold))
    if trainer.test_report is not None:
        print("test: {}".format(trainer.test_report))
    return 0


def cli() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    configure(parser)
    return common.run(main, parser.parse_args())


if __name__ == "__main__":
    sys.exit(cli() or 0)
