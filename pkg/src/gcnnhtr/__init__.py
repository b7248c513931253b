#!/usr/bin/env python3

"""
    gcnnhtr
    ~~~~~~~

    Handwritten text line recognition with gated convolutional networks,
    written against numpy only. It's small enough to train on a desktop CPU.

    **Remarks:**
    * Line images are grayscale with 0 = ink, 1 = background. They are
      normalized to 32px height and cut into 32x32 windows (stride 4);
      the window index is the time axis of the CTC loss.
    * Three recognizers are available: a CNN+BLSTM baseline, the same
      network without recurrent layers and a gated CNN without any
      recurrence. Their layer lists live in ``architectures.yaml``.
    * Gradients come from a small tape-based reverse-mode engine
      (``gcnnhtr.tensor``), double precision by default.

    (c) BSD 3-clause
"""

__version__ = "1.0"
__license__ = "3-clause BSD license"
__docformat__ = "reStructuredText"

from .tensor import Tensor, Parameter, Tape, ParameterRegistry, grad_check
from .layers import ConvSpec, GateSpec, NormState
from .ctc import Vocabulary, LogitSequence, ctc_loss, ctc_grad, ctc_brute_force, best_path_decode
from .preprocess import LineImage, FrameSequence, normalize_height, sliding_windows, prepare
from .augment import (LabeledSample, AugmentConfig, GridConfig, augment_sample, expand_training_set,
                      add_grid_background, synth_line)
from .models import ModelConfig, ModelSummary, Model, apply_ablation, build_model, count_params
from .metrics import edit_distance, corpus_cer, RunRecord, time_to_threshold
from .optim import OptimState, adam_step
from .train import TrainConfig, Trainer, train, evaluate, summarize, synth_dataset, augment_preview

from . import bin
from . import exc
