#!/usr/bin/env python3

"""
    train.py
    ~~~~~~~~

    Training loop and the operations behind the command line tools:
    training, evaluation, parameter summaries, synthetic datasets and
    augmentation previews.

    Determinism is only claimed for ``loader_threads = 0``: with the same
    TrainConfig and seed two runs produce identical losses.

    (c) BSD 3-clause.
"""


from .exc import ConfigError, TrainingBailout, VocabularyError, CheckpointError
from .tensor import ParameterRegistry, Tape, load_checkpoint
from .ctc import Vocabulary, ctc_loss_tensor, best_path_decode, required_frames
from .preprocess import FrameSequence, prepare, read_pgm, write_pgm
from .augment import (LabeledSample, AugmentConfig, GridConfig, TRANSFORMS, augment_sample, expand_training_set,
                      add_grid_background, grid_phase, synth_line, load_samples, save_samples)
from .models import ModelConfig, Model, ModelSummary, VARIANTS, ABLATIONS, build_model, count_params
from .metrics import RunRecord, corpus_cer, time_to_threshold
from .optim import OptimState, adam_step

import os
import csv
import math
import time
import typing
import logging
import dataclasses
import concurrent.futures

import numpy as np
import yaml

__all__ = [
    "TrainConfig",
    "Trainer",
    "EvaluationReport",
    "train",
    "load_model",
    "evaluate",
    "summarize",
    "SweepRow",
    "summarize_sweep",
    "synth_dataset",
    "augment_preview",
    "THRESHOLD_FACTOR",
]

# training time is reported up to the first epoch within 5% of the best CER
THRESHOLD_FACTOR = 1.05


@dataclasses.dataclass
class TrainConfig:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train_manifest: str = ""
    val_manifest: typing.Optional[str] = None
    test_manifest: typing.Optional[str] = None
    vocabulary: typing.Optional[typing.List[str]] = None
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 0
    seed: int = 0
    lr: float = 1e-4
    augment: bool = False
    augment_config: AugmentConfig = dataclasses.field(default_factory=AugmentConfig)
    grid_background: typing.Optional[GridConfig] = None
    checkpoint_dir: str = "run"
    loader_threads: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.augment_config, dict):
            self.augment_config = AugmentConfig(**self.augment_config)
        if isinstance(self.grid_background, dict):
            self.grid_background = GridConfig(**self.grid_background)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1, got {}".format(self.batch_size))
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1, got {}".format(self.max_epochs))
        if self.patience < 0 or self.loader_threads < 0:
            raise ConfigError("patience and loader_threads must not be negative")

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("Unknown training settings: {}".format(", ".join(sorted(unknown))))
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e))

    @classmethod
    def from_yaml(cls, filepath: str) -> 'TrainConfig':
        try:
            with open(filepath, encoding="utf-8") as fp:
                data = yaml.safe_load(fp) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError("Cannot read {}: {}".format(filepath, e))
        if not isinstance(data, dict):
            raise ConfigError("{} must contain a mapping".format(filepath))
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self, filepath: str) -> None:
        with open(filepath, "w", encoding="utf-8") as fp:
            yaml.safe_dump(self.to_dict(), fp, allow_unicode=True, sort_keys=False)


def _preprocess(samples: typing.Sequence[LabeledSample], threads: int) -> typing.List[FrameSequence]:
    images = [s.image for s in samples]
    if threads <= 0:
        return [prepare(img) for img in images]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(prepare, images))


def _with_grid(samples: typing.Sequence[LabeledSample], grid: GridConfig, seed: int) -> typing.List[LabeledSample]:
    out = []
    for i, s in enumerate(samples):
        phased = dataclasses.replace(grid, phase=grid_phase(seed, i, grid.line_spacing_px))
        out.append(LabeledSample(add_grid_background(s.image, phased), s.text))
    return out


def _check_vocabulary(vocab: Vocabulary, samples: typing.Iterable[LabeledSample], source: str) -> None:
    for s in samples:
        unknown = sorted({ch for ch in s.text if ch not in vocab})
        if unknown:
            raise VocabularyError("{}: transcription {!r} uses codepoints outside the vocabulary: {}".format(
                source, s.text, "".join(unknown)))


def _checkpoint_meta(model: Model, vocab: Vocabulary, **extra) -> dict:
    meta = {"model": model.config.to_dict(), "vocabulary": vocab.to_list()}
    meta.update(extra)
    return meta


@dataclasses.dataclass
class EvaluationReport:
    cer: float
    pairs: typing.List[typing.Tuple[str, str]]

    def __str__(self) -> str:
        return "CER {:.2f}% on {} lines".format(self.cer, len(self.pairs))


class Trainer:
    """Trains one model on the manifests of a TrainConfig.

    After `run` the trainer holds the seconds until the validation CER
    first came within 5% of its minimum and, if a test manifest is
    configured, the test CER of the best checkpoint.
    """

    def __init__(self, cfg: TrainConfig, logger: typing.Optional[logging.Logger]=None):
        self.cfg = cfg
        if logger:
            self.log: logging.Logger = logger
        else:
            logging.basicConfig()
            self.log = logging.getLogger(self.__class__.__name__)

        self.rng = np.random.default_rng(cfg.seed)
        self.train_samples: typing.List[LabeledSample] = []
        self.val_samples: typing.List[LabeledSample] = []
        self.train_frames: typing.List[FrameSequence] = []
        self.val_frames: typing.List[FrameSequence] = []
        self.vocab: typing.Optional[Vocabulary] = None
        self.model: typing.Optional[Model] = None
        self.optim = OptimState(lr=cfg.lr)
        self.history = RunRecord()
        self.seconds_to_threshold: typing.Optional[float] = None
        self.test_report: typing.Optional[EvaluationReport] = None

    def load_data(self, train: typing.Optional[typing.Sequence[LabeledSample]]=None,
                  val: typing.Optional[typing.Sequence[LabeledSample]]=None) -> None:
        """Read the manifests (or take the given samples), apply the grid
        background and the 7x augmentation and preprocess everything.
        """
        cfg = self.cfg
        if train is None:
            if not cfg.train_manifest:
                raise ConfigError("No training manifest configured")
            train = load_samples(cfg.train_manifest)
        if val is None:
            val = load_samples(cfg.val_manifest) if cfg.val_manifest else list(train)
        if not train:
            raise ConfigError("Training set is empty")

        if cfg.vocabulary:
            self.vocab = Vocabulary(tuple(cfg.vocabulary))
        else:
            self.vocab = Vocabulary.from_texts(s.text for s in list(train) + list(val))
        _check_vocabulary(self.vocab, train, "training set")
        _check_vocabulary(self.vocab, val, "validation set")

        if cfg.grid_background is not None:
            train = _with_grid(train, cfg.grid_background, cfg.seed)
            val = _with_grid(val, cfg.grid_background, cfg.seed + 1)
        if cfg.augment:
            train = expand_training_set(train, cfg.augment_config)
            self.log.info("augmented training set: %d samples", len(train))

        frames = _preprocess(train, cfg.loader_threads)
        self.train_samples, self.train_frames = [], []
        for sample, seq in zip(train, frames):
            needed = required_frames(self.vocab.encode(sample.text))
            if needed > seq.steps:
                self.log.warning("skipping %r: needs %d frames, image yields %d", sample.text, needed, seq.steps)
                continue
            self.train_samples.append(sample)
            self.train_frames.append(seq)
        if not self.train_samples:
            raise ConfigError("No alignable training sample left")
        self.val_samples = list(val)
        self.val_frames = _preprocess(self.val_samples, cfg.loader_threads)

    def build(self) -> Model:
        model_cfg = dataclasses.replace(self.cfg.model, vocab_size=self.vocab.size)
        registry = ParameterRegistry(self.cfg.seed)
        self.model = build_model(model_cfg, registry, seed=self.cfg.seed)
        self.log.info("%s model with %d parameters", model_cfg.variant, registry.count())
        return self.model

    def train_epoch(self, epoch: int) -> float:
        """One pass over the shuffled training set; mean batch loss"""
        order = self.rng.permutation(len(self.train_samples))
        losses = []
        for b, start in enumerate(range(0, len(order), self.cfg.batch_size)):
            batch = order[start:start + self.cfg.batch_size]
            with Tape() as tape:
                probs = self.model.forward_batch([self.train_frames[i].frames for i in batch], train=True)
                terms = [ctc_loss_tensor(p, self.train_samples[i].text, self.vocab) for p, i in zip(probs, batch)]
                loss = terms[0]
                for term in terms[1:]:
                    loss = loss + term
                loss = loss / float(len(terms))
                value = loss.item()
                if not math.isfinite(value):
                    exc = TrainingBailout("non-finite loss {} in epoch {}, batch {}".format(value, epoch, b))
                    exc.data = ["batch index: {}".format(b),
                                "samples: {}".format(", ".join(repr(self.train_samples[i].text) for i in batch)),
                                "loss history: {}".format(", ".join("{:.6g}".format(l) for l in losses))]
                    raise exc
                tape.backward(loss)
            adam_step(self.model.parameters(), self.optim)
            losses.append(value)
            self.log.debug("epoch %d batch %d loss %.6f", epoch, b, value)
        return float(np.mean(losses))

    def predict(self, frames: typing.Sequence[FrameSequence]) -> typing.List[str]:
        return [best_path_decode(self.model.forward(seq.frames, train=False), self.vocab) for seq in frames]

    def validate(self) -> typing.Tuple[float, typing.List[typing.Tuple[str, str]]]:
        pairs = list(zip((s.text for s in self.val_samples), self.predict(self.val_frames)))
        return corpus_cer(pairs), pairs

    def run(self) -> RunRecord:
        if self.vocab is None:
            self.load_data()
        if self.model is None:
            self.build()
        outdir = self.cfg.checkpoint_dir
        os.makedirs(outdir, exist_ok=True)
        self.cfg.to_yaml(os.path.join(outdir, "config.yaml"))

        best, stale, elapsed = math.inf, 0, 0.0
        for epoch in range(1, self.cfg.max_epochs + 1):
            started = time.perf_counter()
            loss = self.train_epoch(epoch)
            elapsed += time.perf_counter() - started
            cer, pairs = self.validate()
            self.history.append(elapsed, loss, cer)
            self.log.info("epoch %d: loss %.4f, CER %.2f%%, %.1fs", epoch, loss, cer, elapsed)

            meta = _checkpoint_meta(self.model, self.vocab, epoch=epoch, val_cer=float(cer))
            self.model.registry.save(os.path.join(outdir, "last.npz"), meta)
            self.history.to_csv(os.path.join(outdir, "run.csv"))
            if cer < best:
                best, stale = cer, 0
                self.model.registry.save(os.path.join(outdir, "best.npz"), meta)
                _write_hypotheses(os.path.join(outdir, "hypotheses.tsv"), pairs)
            else:
                stale += 1
                if self.cfg.patience and stale >= self.cfg.patience:
                    self.log.info("no improvement for %d epochs, stopping", stale)
                    break

        self.seconds_to_threshold = time_to_threshold(self.history, THRESHOLD_FACTOR)
        self.log.info("CER within %d%% of its minimum after %.1fs",
                      round(100 * (THRESHOLD_FACTOR - 1)), self.seconds_to_threshold)
        if self.cfg.test_manifest:
            self.test_report = self.test(os.path.join(outdir, "best.npz"))
        return self.history

    def test(self, checkpoint: str) -> EvaluationReport:
        """Decode the test manifest with `checkpoint`; hypotheses go to
        test_hypotheses.tsv in the checkpoint directory.
        """
        hypotheses = os.path.join(self.cfg.checkpoint_dir, "test_hypotheses.tsv")
        report = evaluate(checkpoint, self.cfg.test_manifest, hypotheses,
                          self.cfg.grid_background, self.cfg.seed + 2)
        self.log.info("test %s", report)
        return report


def train(cfg: TrainConfig, logger: typing.Optional[logging.Logger]=None) -> RunRecord:
    return Trainer(cfg, logger).run()


def _write_hypotheses(filepath: str, pairs: typing.Iterable[typing.Tuple[str, str]]) -> None:
    with open(filepath, "w", encoding="utf-8") as fp:
        for reference, hypothesis in pairs:
            fp.write("{}\t{}\n".format(reference, hypothesis))


def load_model(filepath: str) -> typing.Tuple[Model, Vocabulary]:
    """Rebuild the model stored in a checkpoint together with its vocabulary"""
    arrays, meta = load_checkpoint(filepath)
    if "model" not in meta or "vocabulary" not in meta:
        raise CheckpointError("{} lacks model or vocabulary metadata".format(filepath))
    vocab = Vocabulary(tuple(meta["vocabulary"]))
    model = build_model(ModelConfig.from_dict(meta["model"]))
    if model.config.vocab_size != vocab.size:
        raise VocabularyError("Checkpoint model has {} symbols, its vocabulary {}".format(
            model.config.vocab_size, vocab.size))
    model.registry.load_state(arrays)
    return model, vocab


def evaluate(checkpoint: str, manifest: str, hypotheses: typing.Optional[str]=None,
             grid: typing.Optional[GridConfig]=None, seed: int=0) -> EvaluationReport:
    """Decode every line of `manifest` with the checkpointed model"""
    model, vocab = load_model(checkpoint)
    samples = load_samples(manifest)
    _check_vocabulary(vocab, samples, manifest)
    if grid is not None:
        samples = _with_grid(samples, grid, seed)
    pairs = [(s.text, best_path_decode(model.forward(prepare(s.image).frames), vocab)) for s in samples]
    report = EvaluationReport(corpus_cer(pairs), pairs)
    if hypotheses:
        _write_hypotheses(hypotheses, pairs)
    return report


def summarize(cfg: ModelConfig, csv_path: typing.Optional[str]=None) -> ModelSummary:
    summary = count_params(build_model(cfg))
    if csv_path:
        summary.to_csv(csv_path)
    return summary


@dataclasses.dataclass
class SweepRow:
    variant: str
    ablation: str
    params: int
    delta: int

    FIELDS = ("variant", "ablation", "params", "delta_vs_gcnn")

    def __str__(self) -> str:
        return "{:<10} {:<8} {:>10} {:>+10}".format(self.variant, self.ablation, self.params, self.delta)


SWEEP_DIMENSIONS = ("vocab_size", "blstm_units", "gcnn_max_channels", "gate_blocks", "dropout",
                    "channel_scale", "norm_kind")


def summarize_sweep(base: ModelConfig, csv_path: typing.Optional[str]=None) -> typing.List[SweepRow]:
    """Parameter totals of every variant and of every gcnn ablation.

    Only the dimensions of `base` (vocabulary size, widths, ...) are used;
    `delta` is relative to the unablated gcnn.
    """
    dims = {key: getattr(base, key) for key in SWEEP_DIMENSIONS}
    configs = [ModelConfig(variant=v, **dims) for v in VARIANTS]
    configs += [ModelConfig(variant="gcnn", ablation=a, **dims) for a in ABLATIONS if a != "none"]
    totals = [(cfg, count_params(build_model(cfg)).total_params) for cfg in configs]
    reference = next(n for cfg, n in totals if cfg.variant == "gcnn" and cfg.ablation == "none")
    rows = [SweepRow(cfg.variant, cfg.ablation, n, n - reference) for cfg, n in totals]
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(SweepRow.FIELDS)
            for row in rows:
                writer.writerow([row.variant, row.ablation, row.params, row.delta])
    return rows


def _random_texts(count: int, vocab: Vocabulary, rng: np.random.Generator,
                  min_length: int, max_length: int) -> typing.List[str]:
    texts = []
    for _ in range(count):
        length = int(rng.integers(min_length, max_length + 1))
        texts.append("".join(vocab.symbols[i] for i in rng.integers(0, vocab.size, size=length)))
    return texts


def synth_dataset(count: int, vocab: Vocabulary, seed: int, out_dir: str, min_length: int=3, max_length: int=8,
                  glyph_seed: int=0, augment: typing.Optional[AugmentConfig]=None) -> str:
    """Write `count` synthetic lines (times 7 with `augment`) as PGM files
    plus a manifest; return the manifest path.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    if not 0 <= min_length <= max_length:
        raise ConfigError("Invalid text length range {}..{}".format(min_length, max_length))
    rng = np.random.default_rng(seed)
    texts = _random_texts(count, vocab, rng, min_length, max_length)
    seeds = rng.integers(0, 2 ** 31, size=count)
    samples = [synth_line(text, vocab, int(s), glyph_seed) for text, s in zip(texts, seeds)]
    if augment is not None:
        samples = expand_training_set(samples, augment)
    return save_samples(out_dir, samples)


def augment_preview(image: str, out_dir: str, cfg: typing.Optional[AugmentConfig]=None,
                    grid: typing.Optional[GridConfig]=None) -> typing.List[str]:
    """Write one PGM per transform plus the grid variant of `image`"""
    cfg = cfg or AugmentConfig()
    grid = grid or GridConfig()
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(image))[0]
    sample = LabeledSample(read_pgm(image), "")
    written = []
    for which, name in sorted(TRANSFORMS.items()):
        path = os.path.join(out_dir, "{}_{}_{}.pgm".format(stem, which, name))
        write_pgm(path, augment_sample(sample, which, cfg).image)
        written.append(path)
    path = os.path.join(out_dir, "{}_grid.pgm".format(stem))
    write_pgm(path, add_grid_background(sample.image, grid))
    written.append(path)
    return written
