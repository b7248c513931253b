#!/usr/bin/env python3

"""
    optim.py
    ~~~~~~~~

    Adam with bias-corrected moment estimates.

    (c) BSD 3-clause.
"""


from .exc import ConfigError, GraphError
from .tensor import Parameter

import typing
import dataclasses

import numpy as np

__all__ = ["OptimState", "adam_step"]


@dataclasses.dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    moments: typing.Dict[str, typing.Tuple[np.ndarray, np.ndarray]] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1), got {} and {}".format(self.beta1, self.beta2))
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("Adam lr and eps must be positive")

    def moment(self, param: Parameter) -> typing.Tuple[np.ndarray, np.ndarray]:
        """First and second moment of `param`, created on first use"""
        if param.share_id not in self.moments:
            self.moments[param.share_id] = (np.zeros_like(param.data), np.zeros_like(param.data))
        m, v = self.moments[param.share_id]
        if m.shape != param.shape:
            raise ConfigError("Moments of {} have shape {}, parameter {}".format(param.share_id, m.shape, param.shape))
        return m, v

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params: typing.Iterable[Parameter], state: OptimState) -> None:
    """Update `params` in place from their accumulated gradients, then
    zero the gradients.

    Parameters without a gradient from the last backward pass are left
    untouched; a step where no parameter has one is an error.
    """
    params = list(params)
    ready = [p for p in params if p.grad_ready]
    if not ready:
        raise GraphError("adam_step without gradients, run backward first")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in ready:
        g = p.grad
        m, v = state.moment(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    for p in params:
        p.zero_grad()
