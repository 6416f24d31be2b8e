"""AdamW and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=1e-4) -> None:
    """One in-place AdamW update; ``None`` gradients leave that parameter alone."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


class Adam:
    """AdamW over a list of :class:`~d2cl.nn.tensor.Tensor` parameters."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.betas, self.eps, self.weight_decay = betas, eps, weight_decay
        self.state = AdamState([np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, *self.betas, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class PlateauSchedule:
    lr: float = 1e-4
    factor: float = 0.2
    patience: int = 15
    threshold: float = 1e-4
    min_lr: float = 1e-8
    best: float = -np.inf
    bad_epochs: int = 0
    history: list = field(default_factory=list)


def plateau_update(s: PlateauSchedule, metric: float) -> float:
    """Feed one epoch's validation metric (higher is better); returns the new rate.

    An epoch counts as an improvement when it beats the best so far by more
    than ``threshold``.  After ``patience`` consecutive epochs without one,
    the rate is multiplied by ``factor`` (never below ``min_lr``) and the
    counter restarts.
    """
    if np.isfinite(metric) and metric > s.best + s.threshold:
        s.best = float(metric)
        s.bad_epochs = 0
    else:
        s.bad_epochs += 1
        if s.bad_epochs >= s.patience:
            s.lr = max(s.lr * s.factor, s.min_lr)
            s.bad_epochs = 0
    s.history.append(s.lr)
    return s.lr
