#!/usr/bin/env python3

"""
    exc.py
    ~~~~~~

    Exceptions for handwritten text recognition.

    Every exception carries a machine-readable ``category`` which the
    command line tools print and turn into an exit code.

    (c) BSD 3-clause.
"""


import os
import typing

__all__ = [
    "GcnnHtrError",
    "ShapeMismatch",
    "GraphError",
    "GradientCheckError",
    "CheckpointError",
    "LayerConfigError",
    "NormStateCorrupted",
    "CTCError",
    "UnalignableLabel",
    "VocabularyError",
    "PreprocessError",
    "AugmentError",
    "ModelConfigError",
    "ConfigError",
    "TrainingBailout",
    "EXIT_CODES",
]


class GcnnHtrError(Exception):
    """Base class of all errors raised by gcnnhtr"""
    category: str = "error"


class ShapeMismatch(GcnnHtrError, ValueError):
    """Operands of a tensor operation have incompatible shapes"""
    category = "shape"

    def __init__(self, op: str, left: typing.Tuple[int, ...], right: typing.Tuple[int, ...], detail: str = ""):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        msg = "{}: incompatible shapes {} and {}".format(op, self.left, self.right)
        if detail:
            msg += " ({})".format(detail)
        super(ShapeMismatch, self).__init__(msg)


class GraphError(GcnnHtrError):
    """Misuse of a recorded computation graph"""
    category = "graph"


class GradientCheckError(GcnnHtrError):
    """Finite-difference evaluation produced non-finite values"""
    category = "gradcheck"


class CheckpointError(GcnnHtrError):
    """Parameter checkpoint cannot be written, read or applied"""
    category = "checkpoint"


class LayerConfigError(GcnnHtrError, ValueError):
    """A layer was configured or fed inconsistently"""
    category = "layer"


class NormStateCorrupted(GcnnHtrError):
    """Normalization running statistics are invalid"""
    category = "layer"


class CTCError(GcnnHtrError):
    """CTC computation failed"""
    category = "ctc"


class UnalignableLabel(CTCError):
    """Label needs more frames than the sequence provides"""
    category = "unalignable"
    loss = float("inf")

    def __init__(self, label_length: int, required: int, frames: int):
        self.label_length = label_length
        self.required = required
        self.frames = frames
        super(UnalignableLabel, self).__init__(
            "label of length {} needs {} frames, got {}".format(label_length, required, frames)
        )


class VocabularyError(CTCError):
    """Codepoint is not part of the vocabulary or vocabularies disagree"""
    category = "vocabulary"


class PreprocessError(GcnnHtrError):
    """Image cannot be normalized or windowed"""
    category = "preprocess"


class AugmentError(GcnnHtrError):
    """Augmentation produced an invalid sample"""
    category = "augment"


class ModelConfigError(GcnnHtrError, ValueError):
    """Invalid model variant, ablation or architecture file"""
    category = "model"


class ConfigError(GcnnHtrError, ValueError):
    """Invalid configuration value"""
    category = "config"


class TrainingBailout(GcnnHtrError):
    """Training aborted, carrying diagnostic lines"""
    category = "training"

    def __init__(self, *args, **kwargs):
        super(TrainingBailout, self).__init__(*args, **kwargs)
        self.data: typing.List[str] = []

    @property
    def msg(self) -> str:
        """Error message"""
        return str(self.args[0]) if self.args else ""

    def __str__(self) -> str:
        return "Training aborted! {}{}{}".format(
            self.msg, os.linesep, os.linesep.join(self.data)
        )


EXIT_CODES: typing.Dict[str, int] = {
    "error": 1,
    "shape": 3,
    "graph": 4,
    "gradcheck": 5,
    "checkpoint": 6,
    "layer": 7,
    "ctc": 8,
    "unalignable": 9,
    "vocabulary": 10,
    "preprocess": 11,
    "augment": 12,
    "model": 13,
    "config": 14,
    "training": 15,
}
