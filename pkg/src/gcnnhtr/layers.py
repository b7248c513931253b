#!/usr/bin/env python3

"""
    layers.py
    ~~~~~~~~~

    Neural layers of the recognizers: standard, pointwise and depthwise
    separable convolutions, max-pooling, batch/layer normalization, the
    2-part gate, LSTM/BLSTM, dense and dropout.

    * Image tensors are ordered (batch, channel, height, width).
    * Convolutions use the cross-correlation convention (no kernel flip).
      "same" padding puts the odd padding pixel at the end.
    * A layer is a callable ``layer(x, train=False)``; its trainable
      parameters come from a ``ParameterRegistry`` so that layers built with
      the same share_id use the same storage.

    (c) BSD 3-clause.
"""


from .exc import ShapeMismatch, LayerConfigError, NormStateCorrupted
from .tensor import Tensor, Parameter, ParameterRegistry, _record, as_tensor
from . import tensor as T

import typing
import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConvSpec",
    "GateSpec",
    "NormState",
    "conv2d",
    "depthwise_conv2d",
    "depthwise_separable_conv2d",
    "maxpool2d",
    "normalize",
    "gate_block_gate",
    "lstm_step",
    "blstm",
    "dense",
    "dropout",
    "Layer",
    "Conv2d",
    "MaxPool2d",
    "Norm",
    "Gate",
    "Dense",
    "Dropout",
    "LSTM",
    "BLSTM",
    "LSTMWeights",
]

Shape = typing.Tuple[int, ...]


def _pair(value) -> typing.Tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    return (int(value[0]), int(value[1]))


@dataclasses.dataclass
class ConvSpec:
    """Declarative description of one convolution"""
    in_channels: int
    out_channels: int
    kernel: typing.Tuple[int, int] = (3, 3)
    stride: typing.Tuple[int, int] = (1, 1)
    padding: str = "same"
    separable: bool = False
    bias: bool = True
    share_id: typing.Optional[str] = None

    def __post_init__(self):
        self.kernel = _pair(self.kernel)
        self.stride = _pair(self.stride)
        if self.in_channels < 1 or self.out_channels < 1:
            raise LayerConfigError("Channel counts must be positive: {}".format(self))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise LayerConfigError("Kernel and stride must be >= 1: {}".format(self))
        if self.padding not in ("same", "valid"):
            raise LayerConfigError("Padding must be 'same' or 'valid', not {!r}".format(self.padding))

    def param_count(self) -> int:
        kh, kw = self.kernel
        bias = self.out_channels if self.bias else 0
        if self.separable:
            return kh * kw * self.in_channels + self.in_channels * self.out_channels + bias
        return kh * kw * self.in_channels * self.out_channels + bias

    def output_extent(self, h: int, w: int) -> typing.Tuple[int, int]:
        (kh, kw), (sh, sw) = self.kernel, self.stride
        if self.padding == "same":
            return (-(-h // sh), -(-w // sw))
        return ((h - kh) // sh + 1, (w - kw) // sw + 1)


@dataclasses.dataclass
class GateSpec:
    """Channel count before the split and normalization of both halves"""
    channels: int
    norm_kind: str = "mixed"
    swap_activations: bool = False

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise LayerConfigError(
                "Gate needs an even channel count for its 2-part split, got {}".format(self.channels)
            )
        if self.norm_kind not in ("mixed", "batch", "layer"):
            raise LayerConfigError("Unknown norm_kind {!r}".format(self.norm_kind))

    @property
    def half(self) -> int:
        return self.channels // 2

    def branch_kinds(self) -> typing.Tuple[str, str]:
        """Normalization of the (gate, feature) halves"""
        if self.norm_kind == "mixed":
            return ("batch", "layer")
        return (self.norm_kind, self.norm_kind)


@dataclasses.dataclass
class NormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    kind: str = "batch"
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    @classmethod
    def create(cls, registry: ParameterRegistry, share_id: str, channels: int, kind: str="batch") -> 'NormState':
        return cls(
            gamma=registry.get(share_id + ".gamma", (channels,), init="ones"),
            beta=registry.get(share_id + ".beta", (channels,), init="zeros"),
            running_mean=registry.buffer(share_id + ".running_mean", (channels,), 0.0),
            running_var=registry.buffer(share_id + ".running_var", (channels,), 1.0),
            kind=kind,
        )


# kernels


def _same_pads(n: int, k: int, s: int) -> typing.Tuple[int, int]:
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def _padded(x: np.ndarray, kernel, stride, padding: str):
    (kh, kw), (sh, sw) = kernel, stride
    if padding == "same":
        top, bottom = _same_pads(x.shape[2], kh, sh)
        left, right = _same_pads(x.shape[3], kw, sw)
    else:
        top = bottom = left = right = 0
    pads = (top, bottom, left, right)
    if any(pads):
        x = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    oh = (x.shape[2] - kh) // sh + 1
    ow = (x.shape[3] - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise LayerConfigError("Empty output extent for input {} and kernel {}".format(x.shape, kernel))
    return x, pads, oh, ow


def _windows(xp: np.ndarray, kernel, stride, oh: int, ow: int) -> np.ndarray:
    """(b, c, oh, ow, kh, kw) view of all receptive fields"""
    (kh, kw), (sh, sw) = kernel, stride
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]


def _unpad(g: np.ndarray, pads) -> np.ndarray:
    top, bottom, left, right = pads
    return g[:, :, top:g.shape[2] - bottom, left:g.shape[3] - right]


def _check_image(op: str, x: Tensor, channels: int) -> None:
    if x.ndim != 4:
        raise ShapeMismatch(op, x.shape, (None, channels, None, None), "expected (b, c, h, w)")
    if x.shape[1] != channels:
        raise LayerConfigError("{}: input has {} channels, expected {}".format(op, x.shape[1], channels))


def conv2d(x, weight, bias=None, stride=(1, 1), padding: str="same") -> Tensor:
    """Standard 2D cross-correlation.

    :param x:           Tensor(b, c, h, w)
    :param weight:      Tensor(o, c, kh, kw)
    :param bias:        Tensor(o) or None
    :return:            Tensor(b, o, h', w')
    """
    x, weight = as_tensor(x), as_tensor(weight)
    o, c, kh, kw = weight.shape
    _check_image("conv2d", x, c)
    stride = _pair(stride)
    xp, pads, oh, ow = _padded(x.data, (kh, kw), stride, padding)
    b = x.shape[0]

    cols = _windows(xp, (kh, kw), stride, oh, ow).transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = (cols @ w2.T).reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, o)
        dw = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ w2).reshape(b, oh, ow, c, kh, kw)
        dxp = np.zeros_like(xp)
        sh, sw = stride
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grads = [_unpad(dxp, pads), dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _record(np.ascontiguousarray(out), parents, backward)


def depthwise_conv2d(x, depthwise, stride=(1, 1), padding: str="same") -> Tensor:
    """Per-channel spatial convolution with kernel Tensor(c, kh, kw)"""
    x, depthwise = as_tensor(x), as_tensor(depthwise)
    c, kh, kw = depthwise.shape
    _check_image("depthwise_conv2d", x, c)
    stride = _pair(stride)
    xp, pads, oh, ow = _padded(x.data, (kh, kw), stride, padding)
    win = _windows(xp, (kh, kw), stride, oh, ow)
    out = np.einsum("bchwij,cij->bchw", win, depthwise.data, optimize=True)

    def backward(g):
        dd = np.einsum("bchw,bchwij->cij", g, win, optimize=True)
        dxp = np.zeros_like(xp)
        sh, sw = stride
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += g * depthwise.data[None, :, i, j, None, None]
        return (_unpad(dxp, pads), dd)

    return _record(out, (x, depthwise), backward)


def depthwise_separable_conv2d(x, depthwise, pointwise, bias=None, stride=(1, 1), padding: str="same") -> Tensor:
    """Depthwise stage Tensor(c, kh, kw) followed by pointwise Tensor(o, c)"""
    pointwise = as_tensor(pointwise)
    o, c = pointwise.shape
    spatial = depthwise_conv2d(x, depthwise, stride, padding)
    return conv2d(spatial, T.reshape(pointwise, (o, c, 1, 1)), bias, (1, 1), "valid")


def maxpool2d(x, window=(2, 2), stride=(2, 2)) -> Tensor:
    """Non-overlapping max-pooling; trailing rows/columns that do not fill
    a window are dropped. Ties route the gradient to the first element of
    the window in row-major order.
    """
    x = as_tensor(x)
    window, stride = _pair(window), _pair(stride)
    if window != stride:
        raise LayerConfigError("Only non-overlapping pooling is supported, got {} / {}".format(window, stride))
    if x.ndim != 4:
        raise ShapeMismatch("maxpool2d", x.shape, (None, None, None, None), "expected (b, c, h, w)")
    b, c, h, w = x.shape
    kh, kw = window
    if h < kh or w < kw:
        raise LayerConfigError("maxpool2d: extent {}x{} smaller than window {}".format(h, w, window))
    h2, w2 = h // kh, w // kw
    blocks = (x.data[:, :, :h2 * kh, :w2 * kw]
              .reshape(b, c, h2, kh, w2, kw)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(b, c, h2, w2, kh * kw))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        full = np.zeros_like(x.data)
        full[:, :, :h2 * kh, :w2 * kw] = (routed.reshape(b, c, h2, w2, kh, kw)
                                           .transpose(0, 1, 2, 4, 3, 5)
                                           .reshape(b, c, h2 * kh, w2 * kw))
        return (full,)

    return _record(out, (x,), backward)


def normalize(x, state: NormState) -> Tensor:
    """Batch or layer normalization followed by gamma * x_hat + beta.

    Batch normalization uses the statistics of the batch in train mode and
    updates the running statistics; in eval mode it only reads the running
    statistics. Layer normalization uses per-sample statistics in both
    modes and an affine transform per channel.
    """
    x = as_tensor(x)
    if np.any(state.running_var < 0):
        raise NormStateCorrupted("Negative running variance in normalization state")
    channels = state.gamma.shape[0]
    if x.ndim < 2 or x.shape[1] != channels:
        raise LayerConfigError("normalize: input {} does not have {} channels".format(x.shape, channels))
    bshape = (1, channels) + (1,) * (x.ndim - 2)

    if state.kind == "layer":
        axes = tuple(range(1, x.ndim))
        xc = x - T.mean(x, axis=axes, keepdims=True)
        var = T.mean(T.square(xc), axis=axes, keepdims=True)
        xhat = xc / T.sqrt(var + state.epsilon)
    elif state.mode == "train":
        axes = (0,) + tuple(range(2, x.ndim))
        count = x.size // channels
        if count < 2:
            raise LayerConfigError("Batch normalization needs at least 2 values per channel in training")
        mu = T.mean(x, axis=axes, keepdims=True)
        xc = x - mu
        var = T.mean(T.square(xc), axis=axes, keepdims=True)
        xhat = xc / T.sqrt(var + state.epsilon)

        m = state.momentum
        state.running_mean *= (1.0 - m)
        state.running_mean += m * mu.data.reshape(channels)
        state.running_var *= (1.0 - m)
        state.running_var += m * var.data.reshape(channels) * count / (count - 1)
    else:
        xhat = (x - state.running_mean.reshape(bshape)) / np.sqrt(state.running_var.reshape(bshape) + state.epsilon)

    return xhat * T.reshape(state.gamma, bshape) + T.reshape(state.beta, bshape)


def gate_block_gate(x, spec: GateSpec, gate_norm: NormState, feature_norm: NormState) -> Tensor:
    """Split channels into (gate, features) halves and combine them as
    norm(tanh(gate)) * norm(sigmoid(features)).
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[1] != spec.channels:
        raise LayerConfigError("Gate expects {} channels, input is {}".format(spec.channels, x.shape))
    gate, features = T.split(x, (spec.half, spec.half), axis=1)
    if spec.swap_activations:
        gate, features = T.sigmoid(gate), T.tanh(features)
    else:
        gate, features = T.tanh(gate), T.sigmoid(features)
    return normalize(gate, gate_norm) * normalize(features, feature_norm)


@dataclasses.dataclass
class LSTMWeights:
    """Stacked weights of the input, forget, candidate and output gates
    (column order i, f, g, o)
    """
    kernel: Parameter
    bias: Parameter

    @property
    def units(self) -> int:
        return self.bias.shape[0] // 4


def lstm_step(x, h, c, weights: LSTMWeights) -> typing.Tuple[Tensor, Tensor]:
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    units = weights.units
    if h.shape != c.shape or h.shape[-1] != units or x.shape[0] != h.shape[0]:
        raise ShapeMismatch("lstm_step", x.shape, h.shape, "{} units".format(units))
    if weights.kernel.shape[0] != x.shape[1] + units:
        raise ShapeMismatch("lstm_step", x.shape, weights.kernel.shape)
    z = T.concat([x, h], axis=1) @ weights.kernel + weights.bias
    i, f, g, o = T.split(z, (units,) * 4, axis=1)
    i, f, g, o = T.sigmoid(i), T.sigmoid(f), T.tanh(g), T.sigmoid(o)
    c_next = f * c + i * g
    return o * T.tanh(c_next), c_next


def dense(x, weight, bias=None) -> Tensor:
    out = T.matmul(x, weight)
    return out + bias if bias is not None else out


def dropout(x, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout"""
    if not 0.0 <= rate < 1.0:
        raise LayerConfigError("Dropout rate must lie in [0, 1), got {}".format(rate))
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


# layer objects


class Layer:
    """Base class of all layers"""
    kind: str = "layer"

    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> typing.List[Parameter]:
        return []

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def share_id(self) -> str:
        return self.name

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def __call__(self, x, train: bool=False) -> Tensor:
        raise NotImplementedError()

    def __repr__(self) -> str:
        return "{}({!r})".format(self.__class__.__name__, self.name)


class Conv2d(Layer):
    """Standard or depthwise separable convolution with optional ReLU"""
    kind = "conv"

    def __init__(self, name: str, spec: ConvSpec, registry: ParameterRegistry, activation: str="relu"):
        super(Conv2d, self).__init__(name)
        self.spec = spec
        self.activation = activation
        sid = spec.share_id or name
        kh, kw = spec.kernel
        cin, cout = spec.in_channels, spec.out_channels
        if spec.separable:
            self.depthwise = registry.get(sid + ".depthwise", (cin, kh, kw), fan_in=kh * kw, fan_out=kh * kw)
            self.pointwise = registry.get(sid + ".pointwise", (cout, cin), fan_in=cin, fan_out=cout)
        else:
            self.weight = registry.get(sid + ".weight", (cout, cin, kh, kw),
                                       fan_in=cin * kh * kw, fan_out=cout * kh * kw)
        self.bias = registry.get(sid + ".bias", (cout,), init="zeros") if spec.bias else None

        if self.param_count() != spec.param_count():
            raise LayerConfigError("{}: built {} parameters, spec requires {}".format(
                name, self.param_count(), spec.param_count()))

    def share_id(self) -> str:
        return self.spec.share_id or self.name

    def parameters(self) -> typing.List[Parameter]:
        params = [self.depthwise, self.pointwise] if self.spec.separable else [self.weight]
        return params + ([self.bias] if self.bias is not None else [])

    def output_shape(self, shape: Shape) -> Shape:
        h, w = self.spec.output_extent(shape[2], shape[3])
        return (shape[0], self.spec.out_channels, h, w)

    def __call__(self, x, train: bool=False) -> Tensor:
        s = self.spec
        if s.separable:
            out = depthwise_separable_conv2d(x, self.depthwise, self.pointwise, self.bias, s.stride, s.padding)
        else:
            out = conv2d(x, self.weight, self.bias, s.stride, s.padding)
        return T.relu(out) if self.activation == "relu" else out


class MaxPool2d(Layer):
    kind = "pool"

    def __init__(self, name: str, window=(2, 2)):
        super(MaxPool2d, self).__init__(name)
        self.window = _pair(window)

    def output_shape(self, shape: Shape) -> Shape:
        return shape[:2] + (shape[2] // self.window[0], shape[3] // self.window[1])

    def __call__(self, x, train: bool=False) -> Tensor:
        return maxpool2d(x, self.window, self.window)


class Norm(Layer):
    kind = "norm"

    def __init__(self, name: str, channels: int, registry: ParameterRegistry, norm_kind: str="batch"):
        super(Norm, self).__init__(name)
        self.state = NormState.create(registry, name, channels, norm_kind)

    def parameters(self) -> typing.List[Parameter]:
        return [self.state.gamma, self.state.beta]

    def __call__(self, x, train: bool=False) -> Tensor:
        self.state.mode = "train" if train else "eval"
        return normalize(x, self.state)


class Gate(Layer):
    """2-part channel gate with a normalization per half"""
    kind = "gate"

    def __init__(self, name: str, spec: GateSpec, registry: ParameterRegistry):
        super(Gate, self).__init__(name)
        self.spec = spec
        gate_kind, feature_kind = spec.branch_kinds()
        self.gate_norm = Norm(name + ".gate_norm", spec.half, registry, gate_kind)
        self.feature_norm = Norm(name + ".feature_norm", spec.half, registry, feature_kind)

    def parameters(self) -> typing.List[Parameter]:
        return self.gate_norm.parameters() + self.feature_norm.parameters()

    def output_shape(self, shape: Shape) -> Shape:
        return (shape[0], self.spec.half) + tuple(shape[2:])

    def __call__(self, x, train: bool=False) -> Tensor:
        mode = "train" if train else "eval"
        self.gate_norm.state.mode = self.feature_norm.state.mode = mode
        return gate_block_gate(x, self.spec, self.gate_norm.state, self.feature_norm.state)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_units: int, out_units: int, registry: ParameterRegistry,
                 bias: bool=True, activation: str="none"):
        super(Dense, self).__init__(name)
        self.in_units, self.out_units = in_units, out_units
        self.activation = activation
        self.weight = registry.get(name + ".weight", (in_units, out_units))
        self.bias = registry.get(name + ".bias", (out_units,), init="zeros") if bias else None

    def parameters(self) -> typing.List[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape[:-1]) + (self.out_units,)

    def __call__(self, x, train: bool=False) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 3:
            # (T, b, in) sequences are applied per time step
            steps, b, _ = x.shape
            out = dense(T.reshape(x, (steps * b, self.in_units)), self.weight, self.bias)
            out = T.reshape(out, (steps, b, self.out_units))
        else:
            out = dense(x, self.weight, self.bias)
        return T.relu(out) if self.activation == "relu" else out


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name: str, rate: float, rng: typing.Optional[np.random.Generator]=None):
        super(Dropout, self).__init__(name)
        if not 0.0 <= rate < 1.0:
            raise LayerConfigError("Dropout rate must lie in [0, 1), got {}".format(rate))
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def __call__(self, x, train: bool=False) -> Tensor:
        return dropout(x, self.rate, train, self.rng)


class LSTM(Layer):
    """Unidirectional LSTM over (T, b, in) sequences"""
    kind = "lstm"

    def __init__(self, name: str, in_units: int, units: int, registry: ParameterRegistry,
                 share_id: typing.Optional[str]=None):
        super(LSTM, self).__init__(name)
        self._share_id = share_id or name
        self.in_units, self.units = in_units, units
        self.weights = LSTMWeights(
            kernel=registry.get(self._share_id + ".kernel", (in_units + units, 4 * units),
                                fan_in=in_units + units, fan_out=units),
            bias=registry.get(self._share_id + ".bias", (4 * units,), init="zeros"),
        )

    def share_id(self) -> str:
        return self._share_id

    def parameters(self) -> typing.List[Parameter]:
        return [self.weights.kernel, self.weights.bias]

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape[:-1]) + (self.units,)

    def __call__(self, x, train: bool=False) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[0] < 1:
            raise ShapeMismatch("lstm", x.shape, (None, None, self.in_units), "need T >= 1")
        b = x.shape[1]
        h = c = as_tensor(np.zeros((b, self.units), dtype=x.dtype))
        outputs = []
        for t in range(x.shape[0]):
            h, c = lstm_step(T.take(x, t), h, c, self.weights)
            outputs.append(h)
        return T.stack(outputs, axis=0)


def blstm(sequence, forward: LSTM, backward: LSTM) -> Tensor:
    """Concatenate a forward pass and a time-reversed backward pass"""
    sequence = as_tensor(sequence)
    if sequence.ndim != 3 or sequence.shape[0] < 1:
        raise ShapeMismatch("blstm", sequence.shape, (None, None, None), "need T >= 1")
    fw = forward(sequence)
    bw = T.flip(backward(T.flip(sequence, axis=0)), axis=0)
    return T.concat([fw, bw], axis=2)


class BLSTM(Layer):
    kind = "blstm"

    def __init__(self, name: str, in_units: int, units: int, registry: ParameterRegistry):
        super(BLSTM, self).__init__(name)
        self.units = units
        self.forward = LSTM(name + ".fw", in_units, units, registry)
        self.backward = LSTM(name + ".bw", in_units, units, registry)

    def parameters(self) -> typing.List[Parameter]:
        return self.forward.parameters() + self.backward.parameters()

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape[:-1]) + (2 * self.units,)

    def __call__(self, x, train: bool=False) -> Tensor:
        return blstm(x, self.forward, self.backward)
