"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs, eps: float = 1e-5, n_samples: int | None = None, seed: int = 0) -> float:
    """Max relative error between autodiff and central differences.

    ``fn`` maps the list of tensors ``inputs`` (64-bit, ``requires_grad``
    set on the ones to check) to a tensor of any shape.  The output is
    contracted with fixed random weights so every output element matters.
    ``n_samples`` limits how many coordinates per input are perturbed.
    Per input the error is ``max|a - n| / max(max|a|, max|n|)``.
    """
    rng = np.random.default_rng(seed)
    out = fn(inputs)
    weights = rng.standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    out.backward(weights)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if n_samples is not None and n_samples < flat.size:
            idx = rng.choice(flat.size, n_samples, replace=False)
        numeric = np.zeros(idx.size)
        for c, q in enumerate(idx):
            old = flat[q]
            flat[q] = old + eps
            up = float((fn(inputs).data * weights).sum())
            flat[q] = old - eps
            down = float((fn(inputs).data * weights).sum())
            flat[q] = old
            numeric[c] = (up - down) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(a - numeric).max(initial=0.0) / scale))
    return worst


def tensors64(*arrays, requires_grad=True) -> list[Tensor]:
    return [Tensor(np.array(a, dtype=np.float64), requires_grad=requires_grad) for a in arrays]
