#!/usr/bin/env python3

"""
    ctc.py
    ~~~~~~

    Connectionist temporal classification.

    * The blank is the last class: a vocabulary of n symbols yields
      probability rows of width n+1 with blank index n.

    * ``ctc_loss`` and ``ctc_grad`` run the forward-backward recursion over
      the blank-extended label l' (length 2|l|+1) in log-space and consume
      post-softmax probabilities. ``ctc_loss_tensor`` wraps both as a tape
      operation so that softmax and CTC compose through reverse mode.

    * ``ctc_brute_force`` enumerates all frame paths and serves as oracle.

    (c) BSD 3-clause.
"""


from .exc import CTCError, UnalignableLabel, VocabularyError
from .tensor import Tensor, _record, as_tensor

import itertools
import typing
import dataclasses

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Vocabulary",
    "LogitSequence",
    "required_frames",
    "collapse",
    "ctc_loss",
    "ctc_grad",
    "ctc_loss_tensor",
    "ctc_brute_force",
    "best_path_decode",
]


@dataclasses.dataclass(frozen=True)
class Vocabulary:
    """Ordered distinct codepoints; the blank follows the last symbol"""
    symbols: typing.Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise VocabularyError("Vocabulary symbols must be distinct")
        if any(len(s) != 1 for s in self.symbols):
            raise VocabularyError("Vocabulary symbols must be single codepoints")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def from_texts(cls, texts: typing.Iterable[str]) -> 'Vocabulary':
        return cls(tuple(sorted(set(itertools.chain.from_iterable(texts)))))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    @property
    def classes(self) -> int:
        return len(self.symbols) + 1

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def encode(self, text: typing.Iterable[str]) -> typing.List[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as e:
            raise VocabularyError("Unknown codepoint {!r}".format(e.args[0]))

    def decode(self, indices: typing.Iterable[int]) -> str:
        return "".join(self.symbols[i] for i in indices)

    def to_list(self) -> typing.List[str]:
        return list(self.symbols)


@dataclasses.dataclass
class LogitSequence:
    """Per-frame class probabilities, shape (T, n+1)"""
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise CTCError("Probabilities must have shape (T, n+1) with T >= 1, got {}".format(self.probs.shape))
        if not np.allclose(self.probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise CTCError("Probability rows must sum to 1")

    @property
    def frames(self) -> int:
        return self.probs.shape[0]


def _probs(probs) -> np.ndarray:
    if isinstance(probs, LogitSequence):
        return probs.probs
    if isinstance(probs, Tensor):
        return probs.data
    return np.asarray(probs, dtype=np.float64)


def required_frames(label: typing.Sequence) -> int:
    """|l| plus one separating blank per adjacent repetition"""
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def collapse(path: typing.Iterable[int], blank: int) -> typing.List[int]:
    """Merge adjacent repeats, then remove blanks"""
    return [k for k, _ in itertools.groupby(path) if k != blank]


def _prepare(probs, label: str, vocab: Vocabulary) -> typing.Tuple[np.ndarray, np.ndarray, typing.List[int]]:
    y = _probs(probs)
    if y.ndim != 2 or y.shape[1] != vocab.classes:
        raise VocabularyError("Probabilities of shape {} do not match {} classes".format(y.shape, vocab.classes))
    encoded = vocab.encode(label)
    needed = required_frames(encoded)
    if needed > y.shape[0]:
        raise UnalignableLabel(len(encoded), needed, y.shape[0])
    extended = np.full(2 * len(encoded) + 1, vocab.blank_index, dtype=np.int64)
    extended[1::2] = encoded
    return y, extended, encoded


def _recursions(y: np.ndarray, ext: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-space alpha-hat, beta-hat and per-state log emissions.

    alpha_hat[t, s] sums the paths ending in state s at t *before* emitting
    y[t, ext[s]], beta_hat[t, s] the continuations *after* it, so that
    p(l|x) = sum_s alpha_hat[t, s] * y[t, ext[s]] * beta_hat[t, s] for any t
    and dp/dy[t, k] = sum_{s: ext[s] == k} alpha_hat[t, s] * beta_hat[t, s].
    """
    steps, states = y.shape[0], len(ext)
    with np.errstate(divide="ignore"):
        logy = np.log(y[:, ext])
    skip = np.zeros(states, dtype=bool)
    skip[2:] = (ext[2:] != ext[:-2]) & (ext[2:] != ext[-1])

    alpha_hat = np.full((steps, states), -np.inf)
    alpha_hat[0, :min(2, states)] = 0.0
    for t in range(1, steps):
        prev = alpha_hat[t - 1] + logy[t - 1]
        cur = prev.copy()
        cur[1:] = np.logaddexp(cur[1:], prev[:-1])
        cur[2:] = np.where(skip[2:], np.logaddexp(cur[2:], prev[:-2]), cur[2:])
        alpha_hat[t] = cur

    beta_hat = np.full((steps, states), -np.inf)
    beta_hat[-1, -min(2, states):] = 0.0
    for t in range(steps - 2, -1, -1):
        nxt = beta_hat[t + 1] + logy[t + 1]
        cur = nxt.copy()
        cur[:-1] = np.logaddexp(cur[:-1], nxt[1:])
        cur[:-2] = np.where(skip[2:], np.logaddexp(cur[:-2], nxt[2:]), cur[:-2])
        beta_hat[t] = cur
    return alpha_hat, beta_hat, logy


def _log_likelihood(alpha_hat: np.ndarray, logy: np.ndarray) -> float:
    ends = -min(2, alpha_hat.shape[1])
    return float(logsumexp(alpha_hat[-1, ends:] + logy[-1, ends:]))


def ctc_loss(probs, label: str, vocab: Vocabulary) -> float:
    """Negative log likelihood of `label` given per-frame probabilities"""
    y, ext, _ = _prepare(probs, label, vocab)
    alpha_hat, _, logy = _recursions(y, ext)
    return -_log_likelihood(alpha_hat, logy)


def ctc_grad(probs, label: str, vocab: Vocabulary) -> np.ndarray:
    """d(ctc_loss)/d(probs), shape (T, n+1)"""
    y, ext, _ = _prepare(probs, label, vocab)
    alpha_hat, beta_hat, logy = _recursions(y, ext)
    log_p = _log_likelihood(alpha_hat, logy)
    if not np.isfinite(log_p):
        raise CTCError("Label {!r} has zero probability under the given frames".format(label))

    terms = alpha_hat + beta_hat - log_p
    grad = np.zeros_like(y)
    for k in np.unique(ext):
        grad[:, k] = -np.exp(logsumexp(terms[:, ext == k], axis=1))
    return grad


def ctc_loss_tensor(probs: Tensor, label: str, vocab: Vocabulary) -> Tensor:
    """CTC loss as a tape operation on a Tensor(T, n+1) of probabilities"""
    probs = as_tensor(probs)
    loss = ctc_loss(probs.data, label, vocab)
    return _record(np.asarray(loss), (probs,), lambda g: (g * ctc_grad(probs.data, label, vocab),))


def ctc_brute_force(probs, label: str, vocab: Vocabulary, max_T: int=8) -> float:
    """Sum the probabilities of all frame paths collapsing to `label`"""
    y = _probs(probs)
    steps, classes = y.shape
    if steps > max_T or classes > 5:
        raise CTCError("Brute force limited to T <= {} and 5 classes, got T={}, {} classes".format(
            max_T, steps, classes))
    if classes != vocab.classes:
        raise VocabularyError("Probabilities of shape {} do not match {} classes".format(y.shape, vocab.classes))
    target = vocab.encode(label)
    total = 0.0
    for path in itertools.product(range(classes), repeat=steps):
        if collapse(path, vocab.blank_index) == target:
            total += float(np.prod(y[np.arange(steps), path]))
    return total


def best_path_decode(probs, vocab: Vocabulary) -> str:
    """Greedy decoding: per-frame argmax (lowest index on ties), collapse"""
    y = _probs(probs)
    return vocab.decode(collapse(y.argmax(axis=1).tolist(), vocab.blank_index))
