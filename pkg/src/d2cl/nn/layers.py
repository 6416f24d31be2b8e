"""Parameter containers around the functional ops."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, parameter


class Module:
    """Walks attributes to find parameters, buffers and sub-modules."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for t, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{t}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if name.startswith("running_") and isinstance(value, np.ndarray):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for t, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{t}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast parameters and buffers in place."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name, value in list(vars(m).items()):
                if name.startswith("running_") and isinstance(value, np.ndarray):
                    setattr(m, name, value.astype(dtype))
        return self

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, dtype=np.float32):
        self.weight = parameter(he_normal(rng, (n_in, n_out), n_in, dtype))
        self.bias = parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, dtype=np.float32):
        self.weight = parameter(he_normal(rng, (c_out, c_in, k, k), c_in * k * k, dtype))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.stride, self.padding)


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, bias=True, dtype=np.float32):
        self.weight = parameter(he_normal(rng, (c_out, c_in, k), c_in * k, dtype))
        self.bias = parameter(np.zeros((c_out, 1), dtype=dtype)) if bias else None
        self.stride = stride

    def forward(self, x):
        y = ops.conv1d(x, self.weight, self.stride)
        return y if self.bias is None else y + self.bias


class BatchNorm(Module):
    """Batch normalisation over every axis except the channel axis 1."""

    def __init__(self, n, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = parameter(np.ones(n, dtype=dtype))
        self.beta = parameter(np.zeros(n, dtype=dtype))
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class PReLU(Module):
    def __init__(self, n=1, init=0.25, dtype=np.float32):
        self.slope = parameter(np.full(n, init, dtype=dtype))

    def forward(self, x):
        return ops.prelu(x, self.slope)


class GraphConv(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        # glorot-style init keeps tanh out of saturation
        scale = np.sqrt(2.0 / (n_in + n_out))
        self.weight = parameter((rng.standard_normal((n_in, n_out)) * scale).astype(dtype))

    def forward(self, z, a_norm):
        return ops.graph_conv(z, a_norm, self.weight, normalized=True)
