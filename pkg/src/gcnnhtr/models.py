#!/usr/bin/env python3

"""
    models.py
    ~~~~~~~~~

    Config-driven construction of the recognizers and parameter accounting.

    Three variants are declared in ``architectures.yaml``:

    * ``baseline``   8 convolutions (32..256), 4 max-pools, dropout, dense,
                     2 BLSTM layers, dense n+1, softmax
    * ``cnn_dense``  the baseline without its recurrent layers
    * ``gcnn``       convolutions rising to 512 channels, pools delayed to
                     the last third, GateBlocks early in the stack, a
                     depthwise separable tail with shared layers and
                     residual taps fused by a pointwise convolution

    The gcnn ablations a1..a5 are flags on the ModelConfig, set by
    ``apply_ablation``.

    (c) BSD 3-clause.
"""


from .exc import ModelConfigError, ShapeMismatch
from .layers import (ConvSpec, GateSpec, Layer, Conv2d, MaxPool2d, Gate, Dense, Dropout, BLSTM, maxpool2d)
from .tensor import Tensor, Parameter, ParameterRegistry, as_tensor
from .preprocess import FrameSequence
from . import tensor as T

import os
import csv
import typing
import logging
import functools
import dataclasses

import numpy as np
import yaml

__all__ = [
    "VARIANTS",
    "ABLATIONS",
    "REFERENCE_VOCAB_SIZE",
    "ModelConfig",
    "ModelSummary",
    "SummaryRow",
    "Model",
    "GateBlock",
    "Fusion",
    "Flatten",
    "load_architectures",
    "apply_ablation",
    "build_model",
    "count_params",
]

VARIANTS = ("baseline", "cnn_dense", "gcnn")
ABLATIONS = ("none", "a1", "a2", "a3", "a4", "a5")

ARCHITECTURES_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "architectures.yaml")

log = logging.getLogger(__name__)

Shape = typing.Tuple[int, ...]


@functools.lru_cache(maxsize=4)
def _read_architectures(filepath: str) -> dict:
    with open(filepath, encoding="utf-8") as fp:
        arch = yaml.safe_load(fp)
    if not isinstance(arch, dict) or arch.get("version") != 1:
        raise ModelConfigError("{} is not a version 1 architecture file".format(filepath))
    return arch


def load_architectures(filepath: typing.Optional[str]=None) -> dict:
    return _read_architectures(filepath or ARCHITECTURES_FILE)


REFERENCE_VOCAB_SIZE: int = load_architectures()["reference_vocab_size"]


@dataclasses.dataclass
class ModelConfig:
    variant: str = "gcnn"
    ablation: str = "none"
    vocab_size: int = REFERENCE_VOCAB_SIZE
    blstm_units: int = 256
    gcnn_max_channels: int = 512
    gate_blocks: int = 2
    dropout: float = 0.2
    channel_scale: float = 1.0
    norm_kind: str = "mixed"
    # ablation switches, set through apply_ablation
    separable: bool = True
    early_pools: bool = False
    share_weights: bool = True
    gate_mid_convs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelConfigError("Unknown variant {!r}, expected one of {}".format(self.variant, VARIANTS))
        if self.ablation not in ABLATIONS:
            raise ModelConfigError("Unknown ablation {!r}, expected one of {}".format(self.ablation, ABLATIONS))
        if self.ablation != "none" and self.variant != "gcnn":
            raise ModelConfigError("Ablation {} only applies to gcnn, not {}".format(self.ablation, self.variant))
        if self.vocab_size < 1:
            raise ModelConfigError("vocab_size must be >= 1")
        if self.blstm_units < 1 or self.gcnn_max_channels < 2:
            raise ModelConfigError("blstm_units and gcnn_max_channels must be positive")
        if self.gate_blocks < 0 or self.gate_mid_convs not in (1, 2):
            raise ModelConfigError("Invalid GateBlock layout: {} blocks, {} mid convolutions".format(
                self.gate_blocks, self.gate_mid_convs))
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError("dropout must lie in [0, 1), got {}".format(self.dropout))
        if self.channel_scale <= 0:
            raise ModelConfigError("channel_scale must be positive")
        if self.norm_kind not in ("mixed", "batch", "layer"):
            raise ModelConfigError("Unknown norm_kind {!r}".format(self.norm_kind))

    @property
    def classes(self) -> int:
        return self.vocab_size + 1

    def width(self, value) -> int:
        """Resolve a width or placeholder of the architecture file"""
        if value == "$classes":
            return self.classes
        if value == "$blstm_units":
            return self.blstm_units
        if value == "$max":
            value = self.gcnn_max_channels
        if not isinstance(value, int):
            raise ModelConfigError("Unknown width {!r}".format(value))
        if self.channel_scale == 1.0:
            return value
        return max(2, 2 * int(np.floor(value * self.channel_scale / 2 + 0.5)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelConfigError("Unknown model settings: {}".format(", ".join(sorted(unknown))))
        return cls(**data)


def apply_ablation(cfg: ModelConfig, which: str) -> ModelConfig:
    """Return a copy of the gcnn config `cfg` with ablation `which` applied.

    a1  every depthwise separable convolution becomes standard
    a2  max-pools move after the first four 2-convolution blocks
    a3  shared layers get their own weights at every use
    a4  the shared convolution inside each GateBlock is doubled
    a5  GateBlocks are removed
    """
    if which not in ABLATIONS:
        raise ModelConfigError("Unknown ablation {!r}".format(which))
    if which == "none":
        return cfg
    if cfg.variant != "gcnn":
        raise ModelConfigError("Ablation {} only applies to gcnn, not {}".format(which, cfg.variant))
    changes = {
        "a1": {"separable": False},
        "a2": {"early_pools": True},
        "a3": {"share_weights": False},
        "a4": {"gate_mid_convs": 2},
        "a5": {"gate_blocks": 0},
    }[which]
    return dataclasses.replace(cfg, ablation=which, **changes)


# composite layers


class GateBlock(Layer):
    """pre-conv (k -> 2k), gate, shared separable conv(s) (-> 2k), gate"""
    kind = "gateblock"

    def __init__(self, name: str, channels: int, registry: ParameterRegistry, norm_kind: str="mixed",
                 separable: bool=True, mid_share: typing.Optional[str]=None,
                 extra_share: typing.Optional[str]=None, mid_convs: int=1):
        super(GateBlock, self).__init__(name)
        k = channels
        self.pre = Conv2d(name + ".pre", ConvSpec(k, 2 * k), registry, activation="none")
        self.gate_in = Gate(name + ".gate1", GateSpec(2 * k, norm_kind), registry)
        self.extra = []
        if mid_convs == 2:
            self.extra.append(Conv2d(name + ".extra", ConvSpec(k, k, separable=separable, share_id=extra_share),
                                     registry, activation="none"))
        self.mid = Conv2d(name + ".mid", ConvSpec(k, 2 * k, separable=separable, share_id=mid_share),
                          registry, activation="none")
        self.gate_out = Gate(name + ".gate2", GateSpec(2 * k, norm_kind), registry)

    def sublayers(self) -> typing.List[Layer]:
        return [self.pre, self.gate_in] + self.extra + [self.mid, self.gate_out]

    def parameters(self) -> typing.List[Parameter]:
        return _unique(p for layer in self.sublayers() for p in layer.parameters())

    def output_shape(self, shape: Shape) -> Shape:
        for layer in self.sublayers():
            shape = layer.output_shape(shape)
        return shape

    def __call__(self, x, train: bool=False) -> Tensor:
        for layer in self.sublayers():
            x = layer(x, train)
        return x


class Fusion(Layer):
    """Max-pool every tap to the final extent, concatenate, mix pointwise"""
    kind = "fusion"

    def __init__(self, name: str, tap_shapes: typing.Sequence[Shape], extent: typing.Tuple[int, int],
                 out_channels: int, registry: ParameterRegistry):
        super(Fusion, self).__init__(name)
        if not tap_shapes:
            raise ModelConfigError("Fusion {} has no taps".format(name))
        self.extent = extent
        self.factors = []
        for shape in tap_shapes:
            fh, fw = shape[2] // extent[0], shape[3] // extent[1]
            if fh < 1 or fw < 1 or (shape[2] // fh, shape[3] // fw) != extent:
                raise ModelConfigError("Tap of shape {} cannot be pooled to {}".format(shape, extent))
            self.factors.append((fh, fw))
        channels = sum(shape[1] for shape in tap_shapes)
        self.mix = Conv2d(name + ".pointwise", ConvSpec(channels, out_channels, kernel=1), registry)

    def parameters(self) -> typing.List[Parameter]:
        return self.mix.parameters()

    def output_shape(self, shape: Shape) -> Shape:
        return (shape[0], self.mix.spec.out_channels) + self.extent

    def __call__(self, taps, train: bool=False) -> Tensor:
        pooled = [t if f == (1, 1) else maxpool2d(t, f, f) for t, f in zip(taps, self.factors)]
        return self.mix(T.concat(pooled, axis=1), train)


class Flatten(Layer):
    """(T, c, h, w) feature maps to a (T, 1, c*h*w) sequence"""
    kind = "flatten"

    def output_shape(self, shape: Shape) -> Shape:
        return (shape[0], 1, int(np.prod(shape[1:])))

    def __call__(self, x, train: bool=False) -> Tensor:
        x = as_tensor(x)
        return T.reshape(x, (x.shape[0], 1, int(np.prod(x.shape[1:]))))


def _unique(params: typing.Iterable[Parameter]) -> typing.List[Parameter]:
    seen, out = set(), []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


def _flat(layers: typing.Iterable[Layer]) -> typing.Iterator[Layer]:
    for layer in layers:
        if isinstance(layer, GateBlock):
            yield from layer.sublayers()
        else:
            yield layer


@dataclasses.dataclass
class SummaryRow:
    kind: str
    name: str
    shape: Shape
    params: int
    share_id: str


@dataclasses.dataclass
class ModelSummary:
    """Per-layer breakdown; `total_params` counts each share_id once"""
    rows: typing.List[SummaryRow]
    total_params: int

    def of_kind(self, kind: str) -> typing.List[SummaryRow]:
        return [row for row in self.rows if row.kind == kind]

    def share_groups(self) -> typing.Dict[str, typing.List[str]]:
        groups: typing.Dict[str, typing.List[str]] = {}
        for row in self.rows:
            if row.params:
                groups.setdefault(row.share_id, []).append(row.name)
        return {sid: names for sid, names in groups.items() if len(names) > 1}

    def to_csv(self, filepath: str) -> None:
        with open(filepath, "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(["layer", "name", "shape", "params", "share_id"])
            for row in self.rows:
                writer.writerow([row.kind, row.name, "x".join(str(n) for n in row.shape), row.params, row.share_id])

    def __str__(self) -> str:
        lines = ["{:<10} {:<24} {:<20} {:>10}  {}".format("layer", "name", "shape", "params", "share_id")]
        for row in self.rows:
            lines.append("{:<10} {:<24} {:<20} {:>10}  {}".format(
                row.kind, row.name, str(row.shape), row.params, row.share_id))
        lines.append("total parameters: {}".format(self.total_params))
        return os.linesep.join(lines)


class Model:
    """A built recognizer: frames (T, 1, 32, 32) to probabilities (T, n+1)"""

    def __init__(self, config: ModelConfig, registry: ParameterRegistry, features: typing.List[Layer],
                 taps: typing.Sequence[str], fusion: typing.Optional[Fusion], head: typing.List[Layer],
                 frame_shape: Shape):
        self.config = config
        self.registry = registry
        self.features = features
        self.taps = set(taps)
        self.fusion = fusion
        self.flatten = Flatten("flatten")
        self.head = head
        self.frame_shape = tuple(frame_shape)

    def parameters(self) -> typing.List[Parameter]:
        layers = list(_flat(self.features)) + ([self.fusion] if self.fusion else []) + self.head
        return _unique(p for layer in layers for p in layer.parameters())

    def _check_frames(self, frames) -> Tensor:
        if isinstance(frames, FrameSequence):
            frames = frames.frames
        frames = as_tensor(frames, dtype=self.registry.dtype)
        if frames.ndim != 4 or tuple(frames.shape[1:]) != self.frame_shape or frames.shape[0] < 1:
            raise ShapeMismatch("model", frames.shape, (None,) + self.frame_shape, "expected (T, 1, 32, 32), T >= 1")
        return frames

    def extract(self, frames: Tensor, train: bool=False) -> Tensor:
        """Convolutional features of every frame, (T, 1, F)"""
        x, taps = frames, []
        for layer in self.features:
            x = layer(x, train)
            if layer.name in self.taps:
                taps.append(x)
        if self.fusion is not None:
            x = self.fusion(taps, train)
        return self.flatten(x, train)

    def decode_head(self, sequence: Tensor, train: bool=False) -> Tensor:
        x = sequence
        for layer in self.head:
            x = layer(x, train)
        return T.softmax(T.reshape(x, (x.shape[0], self.config.classes)), axis=-1)

    def forward(self, frames, train: bool=False) -> Tensor:
        """Per-frame class probabilities of one line, shape (T, n+1)"""
        return self.decode_head(self.extract(self._check_frames(frames), train), train)

    def forward_batch(self, batch: typing.Sequence, train: bool=False) -> typing.List[Tensor]:
        """Run the frames of several lines through the convolutions at once,
        then the sequence head line by line.
        """
        frames = [self._check_frames(f) for f in batch]
        if not frames:
            return []
        features = self.extract(T.concat(frames, axis=0) if len(frames) > 1 else frames[0], train)
        parts = T.split(features, [f.shape[0] for f in frames], axis=0) if len(frames) > 1 else [features]
        return [self.decode_head(part, train) for part in parts]

    def __call__(self, frames, train: bool=False) -> Tensor:
        return self.forward(frames, train)

    def layers_summary(self) -> typing.List[SummaryRow]:
        shape: Shape = (1,) + self.frame_shape
        rows, tap_shapes = [], []
        for layer in self.features:
            for sub in _flat([layer]):
                shape = sub.output_shape(shape)
                rows.append(SummaryRow(sub.kind, sub.name, shape, sub.param_count(), sub.share_id()))
            if layer.name in self.taps:
                tap_shapes.append(shape)
        if self.fusion is not None:
            shape = self.fusion.output_shape(shape)
            rows.append(SummaryRow("fusion", self.fusion.name, shape, self.fusion.param_count(),
                                   self.fusion.mix.share_id()))
        for layer in [self.flatten] + self.head:
            shape = layer.output_shape(shape)
            rows.append(SummaryRow(layer.kind, layer.name, shape, layer.param_count(), layer.share_id()))
        return rows


def count_params(model: typing.Union[Model, Layer, typing.Sequence[Layer]]) -> ModelSummary:
    """Exact trainable parameter count; shared storage is counted once"""
    if isinstance(model, Model):
        return ModelSummary(model.layers_summary(), sum(p.size for p in model.parameters()))
    layers = [model] if isinstance(model, Layer) else list(model)
    rows = [SummaryRow(l.kind, l.name, (), l.param_count(), l.share_id()) for l in _flat(layers)]
    total = sum(p.size for p in _unique(p for l in layers for p in l.parameters()))
    return ModelSummary(rows, total)


# construction


class _Builder:
    def __init__(self, cfg: ModelConfig, registry: ParameterRegistry, frame: Shape, rng: np.random.Generator):
        self.cfg = cfg
        self.registry = registry
        self.rng = rng
        self.shape: Shape = (1,) + tuple(frame)
        self.layers: typing.List[Layer] = []
        self.taps: typing.List[str] = []
        self.tap_shapes: typing.List[Shape] = []

    def add(self, layer: Layer) -> None:
        self.layers.append(layer)
        self.shape = layer.output_shape(self.shape)
        log.debug("%-18s -> %s", layer.name, self.shape)

    def share(self, entry: dict, key: str="share") -> typing.Optional[str]:
        return entry.get(key) if self.cfg.share_weights else None

    def feature(self, entry: dict, pools: typing.Collection[str]) -> None:
        kind, name = entry["kind"], entry["name"]
        if kind == "conv":
            spec = ConvSpec(
                self.shape[1], self.cfg.width(entry["out"]),
                kernel=entry.get("kernel", 3),
                separable=entry.get("separable", False) and self.cfg.separable,
                share_id=self.share(entry),
            )
            self.add(Conv2d(name, spec, self.registry, activation=entry.get("activation", "relu")))
        elif kind == "dropout":
            self.add(Dropout(name, self.cfg.dropout, self.rng))
        elif kind == "gateblocks":
            for i in range(1, self.cfg.gate_blocks + 1):
                self.add(GateBlock(
                    "{}{}".format(name, i), self.shape[1], self.registry,
                    norm_kind=self.cfg.norm_kind,
                    separable=self.cfg.separable,
                    mid_share=self.share(entry, "mid_share"),
                    extra_share=self.share(entry, "extra_share"),
                    mid_convs=self.cfg.gate_mid_convs,
                ))
        else:
            raise ModelConfigError("Unknown feature layer kind {!r} ({})".format(kind, name))

        if entry.get("tap"):
            self.taps.append(name)
            self.tap_shapes.append(self.shape)
        if name in pools:
            self.add(MaxPool2d("pool_" + name))

    def head(self, entry: dict) -> Layer:
        kind, name = entry["kind"], entry["name"]
        units = self.cfg.width(entry["units"])
        if kind == "dense":
            layer = Dense(name, self.shape[-1], units, self.registry, activation=entry.get("activation", "none"))
        elif kind == "blstm":
            layer = BLSTM(name, self.shape[-1], units, self.registry)
        else:
            raise ModelConfigError("Unknown head layer kind {!r} ({})".format(kind, name))
        self.shape = layer.output_shape(self.shape)
        return layer


def build_model(cfg: ModelConfig, registry: typing.Optional[ParameterRegistry]=None, seed: int=0,
                architectures: typing.Optional[str]=None) -> Model:
    """Build the recognizer described by `cfg` from the architecture file.

    :param cfg:                 model configuration (ablation applied here)
    :param registry:            parameter storage, a fresh seeded one by default
    :param int seed:            seed of initialization and dropout masks
    :param str architectures:   alternative architecture file
    """
    cfg = apply_ablation(cfg, cfg.ablation)
    arch = load_architectures(architectures)
    try:
        spec = arch["variants"][cfg.variant]
    except KeyError:
        raise ModelConfigError("Variant {} is not declared in the architecture file".format(cfg.variant))
    registry = registry if registry is not None else ParameterRegistry(seed)
    builder = _Builder(cfg, registry, tuple(arch["frame"]), np.random.default_rng(seed))

    placement = "early" if cfg.early_pools else "late"
    if placement not in spec["pools"]:
        raise ModelConfigError("Variant {} has no {} pool placement".format(cfg.variant, placement))
    pools = set(spec["pools"][placement])
    for entry in spec["features"]:
        builder.feature(entry, pools)
    features = builder.layers

    fusion = None
    if "fusion" in spec:
        fusion = Fusion(spec["fusion"]["name"], builder.tap_shapes, tuple(builder.shape[2:]),
                        cfg.width(spec["fusion"]["out"]), registry)
        builder.shape = fusion.output_shape(builder.shape)
    builder.shape = Flatten("flatten").output_shape(builder.shape)
    head = [builder.head(entry) for entry in spec["head"]]

    model = Model(cfg, registry, features, builder.taps, fusion, head, tuple(arch["frame"]))
    log.debug("built %s (ablation %s): %d parameters", cfg.variant, cfg.ablation, registry.count())
    return model
