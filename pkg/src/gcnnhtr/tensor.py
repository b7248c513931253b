#!/usr/bin/env python3

"""
    tensor.py
    ~~~~~~~~~

    Dense tensors with tape-based reverse-mode differentiation.

    * A ``Tensor`` wraps a row-major numpy array. Tensors produced by an
      operation are immutable (their array is flagged read-only).

    * Operations are recorded on the ``Tape`` active in the current thread::

        with Tape() as tape:
            loss = tensor.sum(tensor.square(x))
            tape.backward(loss)

      Outside of a tape nothing is recorded, which is how evaluation and
      finite differences run.

    * A ``Parameter`` is a leaf tensor with a gradient accumulator and a
      ``share_id``. The ``ParameterRegistry`` hands out one
      Parameter per share_id, hence two layers asking for the same share_id
      use the same storage and their gradients add up.

    (c) BSD 3-clause.
"""


from .exc import ShapeMismatch, GraphError, GradientCheckError, CheckpointError, ConfigError

import math
import builtins
import typing
import threading

import numpy as np
import yaml
from scipy.special import expit

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ParameterRegistry",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "sqrt",
    "square",
    "softmax",
    "concat",
    "split",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "take",
    "stack",
    "flip",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1

_local = threading.local()


def _active_tape() -> typing.Optional['Tape']:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense n-dimensional real array"""

    def __init__(self, data, requires_grad: bool=False, dtype=None):
        self.data: np.ndarray = np.array(data, dtype=dtype or np.float64)
        self.requires_grad: bool = requires_grad
        self.grad: typing.Optional[np.ndarray] = None
        self.grad_ready: bool = False
        self._node: typing.Optional['_Node'] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> 'Tensor':
        inst = cls.__new__(cls)
        inst.data = data
        inst.data.flags.writeable = False
        inst.requires_grad = False
        inst.grad = None
        inst.grad_ready = False
        inst._node = None
        return inst

    @property
    def shape(self) -> typing.Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch("item", self.shape, (), "tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the data"""
        return np.array(self.data)

    def __repr__(self) -> str:
        return "Tensor(shape={}, dtype={})".format(self.shape, self.dtype)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor with a gradient accumulator"""

    def __init__(self, data, share_id: str, dtype=None):
        super(Parameter, self).__init__(data, requires_grad=True, dtype=dtype)
        self.share_id: str = share_id
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        self.grad[...] = 0.0
        self.grad_ready = False

    def __repr__(self) -> str:
        return "Parameter({!r}, shape={})".format(self.share_id, self.shape)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: typing.Sequence[Tensor], backward: typing.Callable):
        self.out = out
        self.parents = tuple(parents)
        self.backward = backward


class Tape:
    """Records operations of the current thread for one backward pass"""

    def __init__(self):
        self._nodes: typing.List[_Node] = []
        self._consumed: bool = False

    def __enter__(self) -> 'Tape':
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _push(self, node: _Node) -> None:
        if self._consumed:
            raise GraphError("Tape was consumed by backward, call reset() first")
        self._nodes.append(node)

    def reset(self) -> None:
        """Forget the recorded graph so the tape can be reused"""
        self._nodes = []
        self._consumed = False

    def backward(self, output: Tensor) -> None:
        """Fill the gradients of all leaves reachable from scalar `output`.

        Gradients are accumulated, so a parameter used several times
        receives the sum of the gradients of all its uses.
        """
        if self._consumed:
            raise GraphError("backward was already called on this graph")
        if output.size != 1:
            raise GraphError("backward requires a scalar output, got shape {}".format(output.shape))
        self._consumed = True

        seed = np.ones_like(output.data)
        if output._node is None:
            _accumulate_leaf(output, seed)
            return

        grads: typing.Dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    _accumulate_leaf(parent, pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.data)
    leaf.grad += g
    leaf.grad_ready = True


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.array(value, dtype=dtype or np.float64))


def _record(data: np.ndarray, parents: typing.Sequence[Tensor], backward: typing.Callable) -> Tensor:
    out = Tensor._wrap(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(out, parents, backward)
        tape._push(out._node)
    return out


def _unbroadcast(g: np.ndarray, shape: typing.Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape)


# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    return _record(a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-dimensional tensors"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape, "inner dimensions must agree")
    return _record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# elementwise unary


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _record(y, (x,), lambda g: (g / (2.0 * y),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _record(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def softmax(x, axis: int=-1) -> Tensor:
    """Numerically stable softmax along `axis`"""
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


# structural


def concat(tensors: typing.Sequence, axis: int=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat", (), (), "nothing to concatenate")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != axis % ref.ndim and m != n for i, (m, n) in enumerate(zip(ref.shape, t.shape))
        ):
            raise ShapeMismatch("concat", ref.shape, t.shape, "axis {}".format(axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def split(x, sizes: typing.Sequence[int], axis: int=0) -> typing.List[Tensor]:
    """Split `x` along `axis` into consecutive parts of the given sizes"""
    x = as_tensor(x)
    if builtins.sum(sizes) != x.shape[axis] or any(s < 1 for s in sizes):
        raise ShapeMismatch("split", x.shape, tuple(sizes), "sizes must sum to axis {} length".format(axis))
    parts = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        parts.append(_record(x.data[index].copy(), (x,), backward))
        start += size
    return parts


def sum(x, axis=None, keepdims: bool=False) -> Tensor:
    x = as_tensor(x)
    y = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(y, (x,), backward)


def mean(x, axis=None, keepdims: bool=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x, shape: typing.Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, tuple(shape))
    return _record(y.copy(), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: typing.Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _record(x.data.transpose(axes).copy(), (x,),
                   lambda g: (g.transpose(inverse),))


def take(x, index: int) -> Tensor:
    """Select entry `index` along the first axis"""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _record(x.data[index].copy(), (x,), backward)


def stack(tensors: typing.Sequence, axis: int=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeMismatch("stack", tensors[0].shape, t.shape)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def flip(x, axis: int=0) -> Tensor:
    x = as_tensor(x)
    return _record(np.flip(x.data, axis=axis).copy(), (x,), lambda g: (np.flip(g, axis=axis).copy(),))


# parameters


class ParameterRegistry:
    """Hands out Parameters by share_id and keeps normalization buffers.

    :param int seed:        seed for parameter initialization
    :param dtype:           float64 (default) or float32
    """

    def __init__(self, seed: int=0, dtype=np.float64):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: typing.Dict[str, Parameter] = {}
        self.buffers: typing.Dict[str, np.ndarray] = {}
        self.uses: typing.Dict[str, int] = {}

    def get(self, share_id: str, shape: typing.Sequence[int], init: str="glorot",
            fan_in: typing.Optional[int]=None, fan_out: typing.Optional[int]=None) -> Parameter:
        """Return the Parameter for `share_id`, creating it on first use"""
        shape = tuple(int(n) for n in shape)
        self.uses[share_id] = self.uses.get(share_id, 0) + 1
        if share_id in self.params:
            param = self.params[share_id]
            if param.shape != shape:
                raise ShapeMismatch("share " + share_id, param.shape, shape)
            return param

        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "glorot":
            fan_in = fan_in or (shape[0] if shape else 1)
            fan_out = fan_out or (shape[-1] if shape else 1)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-limit, limit, size=shape)
        else:
            raise ConfigError("Unknown initializer {}".format(init))

        param = Parameter(data, share_id, dtype=self.dtype)
        self.params[share_id] = param
        return param

    def buffer(self, name: str, shape: typing.Sequence[int], fill: float) -> np.ndarray:
        """Return the non-trainable buffer `name`, creating it on first use"""
        if name not in self.buffers:
            self.buffers[name] = np.full(tuple(shape), fill, dtype=self.dtype)
        return self.buffers[name]

    def __iter__(self) -> typing.Iterator[Parameter]:
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def count(self) -> int:
        """Number of trainable scalars, each share_id counted once"""
        return int(builtins.sum(p.size for p in self.params.values()))

    def state_dict(self) -> typing.Dict[str, np.ndarray]:
        """Copies of all parameters and buffers, keyed like checkpoint entries"""
        state = {sid: p.data.copy() for sid, p in self.params.items()}
        state.update({"buffer:" + name: buf.copy() for name, buf in self.buffers.items()})
        return state

    def save(self, filepath: str, meta: typing.Optional[dict]=None) -> None:
        save_checkpoint(filepath, self.state_dict(), meta or {})

    def load(self, filepath: str) -> dict:
        """Overwrite parameters and buffers in place; return the metadata"""
        arrays, meta = load_checkpoint(filepath)
        self.load_state(arrays)
        return meta

    def load_state(self, arrays: typing.Mapping[str, np.ndarray]) -> None:
        for name, array in arrays.items():
            if name.startswith("buffer:"):
                target = self.buffers.get(name[len("buffer:"):])
            else:
                target = self.params[name].data if name in self.params else None
            if target is None:
                raise CheckpointError("Checkpoint entry {} has no counterpart".format(name))
            if target.shape != array.shape:
                raise CheckpointError("Entry {}: shape {} != {}".format(name, array.shape, target.shape))
            target[...] = array
        missing = set(self.params) - set(arrays)
        if missing:
            raise CheckpointError("Checkpoint lacks {}".format(", ".join(sorted(missing))))


def save_checkpoint(filepath: str, arrays: typing.Mapping[str, np.ndarray], meta: dict) -> None:
    """Write `arrays` as little-endian float64 plus a version and metadata header"""
    payload = {name: np.asarray(a, dtype="<f8") for name, a in arrays.items()}
    for reserved in ("__format_version__", "__meta__"):
        if reserved in payload:
            raise CheckpointError("{} is a reserved name".format(reserved))
    payload["__format_version__"] = np.array([FORMAT_VERSION], dtype="<i8")
    text = yaml.safe_dump(meta, allow_unicode=True, sort_keys=True)
    payload["__meta__"] = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
    try:
        with open(filepath, "wb") as fp:
            np.savez(fp, **payload)
    except OSError as e:
        raise CheckpointError("Cannot write {}: {}".format(filepath, e))


def load_checkpoint(filepath: str) -> typing.Tuple[typing.Dict[str, np.ndarray], dict]:
    try:
        with np.load(filepath, allow_pickle=False) as npz:
            entries = {name: npz[name] for name in npz.files}
    except (OSError, ValueError) as e:
        raise CheckpointError("Cannot read {}: {}".format(filepath, e))

    version = entries.pop("__format_version__", None)
    if version is None or int(version[0]) != FORMAT_VERSION:
        raise CheckpointError("Unsupported checkpoint format in {}".format(filepath))
    meta_bytes = entries.pop("__meta__", np.zeros(0, dtype=np.uint8))
    meta = yaml.safe_load(meta_bytes.tobytes().decode("utf-8")) or {}
    return entries, meta


# verification


def grad_check(f: typing.Callable[[], Tensor], params: typing.Sequence[Tensor], epsilon: float=1e-6) -> float:
    """Compare analytic gradients with central differences.

    :param f:                   deterministic function returning a scalar Tensor
    :param params:              leaf tensors (typically Parameters) `f` reads
    :param float epsilon:       perturbation in [1e-7, 1e-3]
    :return float error:        max |analytic - numeric| / max(1, |analytic|, |numeric|)
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError("epsilon must lie in [1e-7, 1e-3], got {}".format(epsilon))

    for p in params:
        p.requires_grad = True
        if p.grad is not None:
            p.grad[...] = 0.0
        if not p.data.flags.writeable:
            p.data = p.data.copy()
    with Tape() as tape:
        tape.backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for k, (p, ga) in enumerate(zip(params, analytic)):
        name = getattr(p, "share_id", "param{}".format(k))
        flat = p.data.reshape(-1)
        grad_flat = ga.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            fp = f().item()
            flat[i] = original - epsilon
            fm = f().item()
            flat[i] = original
            if not (math.isfinite(fp) and math.isfinite(fm)):
                index = np.unravel_index(i, p.shape)
                raise GradientCheckError("f is not finite when perturbing {}{}".format(name, list(index)))
            numeric = (fp - fm) / (2.0 * epsilon)
            analytic_i = float(grad_flat[i])
            err = abs(analytic_i - numeric) / max(1.0, abs(analytic_i), abs(numeric))
            worst = max(worst, err)
    return worst
