#!/usr/bin/env python3

"""
    metrics.py
    ~~~~~~~~~~

    Character error rate and training-time statistics.

    (c) BSD 3-clause.
"""


from .exc import ConfigError

import csv
import typing
import dataclasses

import editdistance

__all__ = [
    "edit_distance",
    "corpus_cer",
    "EpochRecord",
    "RunRecord",
    "time_to_threshold",
]


def edit_distance(a: typing.Sequence, b: typing.Sequence) -> int:
    """Levenshtein distance with unit insertion, deletion and substitution"""
    return int(editdistance.eval(a, b))


def corpus_cer(pairs: typing.Iterable[typing.Tuple[str, str]]) -> float:
    """Micro-averaged character error rate in percent.

    :param pairs:   (reference, hypothesis) transcriptions
    :return:        100 * sum(edit distances) / sum(reference lengths);
                    exceeds 100 if hypotheses insert more than they match
    """
    errors = length = 0
    for reference, hypothesis in pairs:
        errors += edit_distance(reference, hypothesis)
        length += len(reference)
    if length == 0:
        raise ConfigError("CER needs at least one nonempty reference")
    return 100.0 * errors / length


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    cum_seconds: float
    train_loss: float
    val_cer: float


@dataclasses.dataclass
class RunRecord:
    """Per-epoch training history"""
    epochs: typing.List[EpochRecord] = dataclasses.field(default_factory=list)

    FIELDS = ("epoch", "cum_seconds", "train_loss", "val_cer")

    def append(self, cum_seconds: float, train_loss: float, val_cer: float) -> EpochRecord:
        if self.epochs and cum_seconds <= self.epochs[-1].cum_seconds:
            raise ConfigError("Cumulative time must increase: {} after {}".format(
                cum_seconds, self.epochs[-1].cum_seconds))
        if val_cer < 0:
            raise ConfigError("Validation CER cannot be negative: {}".format(val_cer))
        record = EpochRecord(len(self.epochs) + 1, float(cum_seconds), float(train_loss), float(val_cer))
        self.epochs.append(record)
        return record

    def __len__(self) -> int:
        return len(self.epochs)

    def __iter__(self) -> typing.Iterator[EpochRecord]:
        return iter(self.epochs)

    @property
    def losses(self) -> typing.List[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def cers(self) -> typing.List[float]:
        return [e.val_cer for e in self.epochs]

    def best(self) -> EpochRecord:
        if not self.epochs:
            raise ConfigError("Empty run")
        return min(self.epochs, key=lambda e: e.val_cer)

    def to_csv(self, filepath: str) -> None:
        with open(filepath, "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(self.FIELDS)
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.cum_seconds), repr(e.train_loss), repr(e.val_cer)])

    @classmethod
    def from_csv(cls, filepath: str) -> 'RunRecord':
        run = cls()
        with open(filepath, newline="", encoding="utf-8") as fp:
            reader = csv.DictReader(fp)
            if tuple(reader.fieldnames or ()) != cls.FIELDS:
                raise ConfigError("{}: expected columns {}".format(filepath, ",".join(cls.FIELDS)))
            for row in reader:
                run.append(float(row["cum_seconds"]), float(row["train_loss"]), float(row["val_cer"]))
        return run

    @classmethod
    def from_series(cls, seconds: typing.Sequence[float], cers: typing.Sequence[float],
                    losses: typing.Optional[typing.Sequence[float]]=None) -> 'RunRecord':
        run = cls()
        for i, (s, c) in enumerate(zip(seconds, cers)):
            run.append(s, losses[i] if losses else 0.0, c)
        return run


def time_to_threshold(run: RunRecord, factor: float=1.05) -> float:
    """Cumulative seconds of the first epoch whose validation CER falls
    below `factor` times the run's minimum.

    A minimum of 0 only admits epochs reaching 0.
    """
    if not len(run):
        raise ConfigError("Empty run")
    minimum = run.best().val_cer
    threshold = factor * minimum
    for e in run:
        if e.val_cer < threshold or e.val_cer == minimum:
            return e.cum_seconds
    return run.best().cum_seconds
