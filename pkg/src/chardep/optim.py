"""Averaged SGD with momentum, step-wise exponential decay, L2 and a global norm cap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    l2_exempt: bool = False
    grad: np.ndarray = field(init=False)
    velocity: np.ndarray = field(init=False)
    average: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.velocity = np.zeros_like(self.value)
        self.average = self.value.copy()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0)


@dataclass
class OptimizerState:
    step: int = 0
    base_lr: float = 0.1
    decay: float = 0.95
    decay_steps: int = 2000
    momentum: float = 0.9
    l2: float = 1e-4
    max_grad_norm: float = 10.0

    def lr(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        return self.base_lr * self.decay ** (s // self.decay_steps)


def global_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients jointly so their global norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(params)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def sgd_step(params: list[Parameter], opt: OptimizerState) -> float:
    """One update from the gradients currently stored on ``params``.

    Clip to the global norm, add L2, take a momentum step with the decayed
    learning rate, fold the new value into the running average, zero the
    gradients. Returns the pre-clipping gradient norm.
    """
    norm = clip_gradients(params, opt.max_grad_norm)
    lr = opt.lr()
    k = opt.step + 1  # number of snapshots in the average after this step
    for p in params:
        g = p.grad
        if not p.l2_exempt and opt.l2:
            g = g + opt.l2 * p.value
        p.velocity *= opt.momentum
        p.velocity += lr * g
        p.value -= p.velocity
        if k == 1:
            p.average[...] = p.value
        else:
            p.average += (p.value - p.average) / k
        p.zero_grad()
    opt.step = k
    return norm
