"""Differentiable layers used by the two towers.

Convolutions are cross-correlations (no kernel flip) on NCHW / NCL
layouts, computed as one batched matmul over unfolded windows.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accumulate, as_tensor, make, matmul, sigmoid_np, tanh


class ShapeError(ValueError):
    pass


def conv_out_size(n: int, k: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """``x``: (B, C, H, W) or (C, H, W); ``w``: (O, C, k, k)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = _unsqueeze0(x)
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    B, C, H, W_ = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Cw}")
    Ho, Wo = conv_out_size(H, kh, stride, padding), conv_out_size(W_, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W_}")
    xd = x.data
    wm = w.data.reshape(O, C * kh * kw)
    if kh == kw == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(xs).reshape(B, C, Ho * Wo)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        # (B, C, kh, kw, Ho, Wo) -> (B, C*kh*kw, Ho*Wo)
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * kh * kw, Ho * Wo)
    out = np.matmul(wm, cols).reshape(B, O, Ho, Wo)

    def backward(g):
        g2 = g.reshape(B, O, Ho * Wo)
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
            _accumulate(w, gw.reshape(w.shape))
        if x.requires_grad:
            gcols = np.matmul(wm.T, g2)
            if kh == kw == 1 and padding == 0:
                gx = np.zeros_like(xd)
                gx[:, :, ::stride, ::stride] = gcols.reshape(B, C, Ho, Wo)
            else:
                gcols = gcols.reshape(B, C, kh, kw, Ho, Wo)
                gxp = np.zeros((B, C, H + 2 * padding, W_ + 2 * padding), dtype=xd.dtype)
                for a in range(kh):
                    for b in range(kw):
                        gxp[:, :, a:a + stride * Ho:stride, b:b + stride * Wo:stride] += gcols[:, :, a, b]
                gx = gxp[:, :, padding:padding + H, padding:padding + W_] if padding else gxp
            _accumulate(x, gx)

    y = make(out, (x, w), backward)
    return _squeeze0(y) if squeeze else y


def conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """``x``: (B, C, L) or (C, L); ``w``: (O, C, k).  No padding."""
    squeeze = x.ndim == 2
    if squeeze:
        x = _unsqueeze0(x)
    B, C, L = x.shape
    O, Cw, k = w.shape
    if Cw != C:
        raise ShapeError(f"conv1d: input has {C} channels, kernel expects {Cw}")
    Lo = conv_out_size(L, k, stride)
    if Lo < 1:
        raise ShapeError(f"conv1d: kernel {k} longer than input {L}")
    xd = x.data
    win = sliding_window_view(xd, k, axis=2)[:, :, ::stride][:, :, :Lo]      # (B, C, Lo, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, C * k, Lo)
    wm = w.data.reshape(O, C * k)
    out = np.matmul(wm, cols)

    def backward(g):
        if w.requires_grad:
            _accumulate(w, np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        if x.requires_grad:
            gcols = np.matmul(wm.T, g).reshape(B, C, k, Lo)
            gx = np.zeros_like(xd)
            for a in range(k):
                gx[:, :, a:a + stride * Lo:stride] += gcols[:, :, a]
            _accumulate(x, gx)

    y = make(out, (x, w), backward)
    return _squeeze0(y) if squeeze else y


def _unsqueeze0(x: Tensor) -> Tensor:
    return make(x.data[None], (x,), lambda g: _accumulate(x, g[0]))


def _squeeze0(x: Tensor) -> Tensor:
    return make(x.data[0], (x,), lambda g: _accumulate(x, g[None]))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` of shape (in, out)."""
    y = matmul(x, w)
    return y if b is None else y + b


def _channel_shape(ndim: int) -> tuple:
    # parameters broadcast along axis 1 (channels / features)
    return (1, -1) + (1,) * (ndim - 2)


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """``x`` where ``x >= 0`` else ``a * x``; ``a`` is per channel (axis 1)."""
    xd = x.data
    shp = _channel_shape(xd.ndim) if xd.ndim > 1 else (-1,)
    ad = a.data.reshape(shp) if a.data.size > 1 else a.data
    # x + (a - 1) * min(x, 0); much faster than masked numpy ops
    xneg = np.minimum(xd, 0)
    out = xneg * (ad - 1)
    out += xd

    def backward(g):
        if x.requires_grad:
            gx = (xd < 0).astype(g.dtype)
            gx *= ad - 1
            gx += 1
            gx *= g
            _accumulate(x, gx)
        if a.requires_grad:
            ga = g * xneg
            if a.data.size > 1:
                axes = tuple(ax for ax in range(xd.ndim) if ax != (1 if xd.ndim > 1 else 0))
                ga = ga.sum(axis=axes)
            else:
                ga = ga.sum().reshape(a.shape)
            _accumulate(a, ga.reshape(a.shape))

    return make(out, (x, a), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every axis except 1.

    In training mode the batch statistics are used and the running buffers
    are updated in place; otherwise the running statistics are used.
    """
    xd = x.data
    B, C = xd.shape[:2]
    shp = _channel_shape(xd.ndim)
    m = xd.size // C

    def csum(a):
        # per-channel sum through a contiguous (B, C, rest) view
        return a.reshape(B, C, -1).sum(axis=2).sum(axis=0)

    if training:
        if B < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2")
        mu = csum(xd) / m
        centred = xd - mu.reshape(shp)
        var = csum(centred * centred) / m
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    scale = gamma.data * inv
    out = xd * scale.reshape(shp)
    out += (beta.data - mu * scale).reshape(shp)

    def backward(g):
        xhat = (xd - mu.reshape(shp)) * inv.reshape(shp)
        s1 = csum(g)
        s2 = csum(g * xhat)
        if gamma.requires_grad:
            _accumulate(gamma, s2)
        if beta.requires_grad:
            _accumulate(beta, s1)
        if x.requires_grad:
            if training:
                gx = g - (s1 / m).reshape(shp)
                gx -= xhat * (s2 / m).reshape(shp)
                gx *= scale.reshape(shp)
            else:
                gx = g * scale.reshape(shp)
            _accumulate(x, gx)

    return make(out, (x, gamma, beta), backward)


def global_avg_pool2d(x: Tensor) -> Tensor:
    B, C, H, W = x.shape

    def backward(g):
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy())

    return make(x.data.mean(axis=(2, 3)), (x,), backward)


# -- graph layers ------------------------------------------------------------

def normalized_adjacency(adj, mask=None) -> np.ndarray:
    """Row-normalised ``D^-1 (A + I)``; padded nodes (``mask`` False) get zero rows."""
    adj = np.asarray(adj, dtype=np.float64)
    n = adj.shape[-1]
    eye = np.eye(n)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        eye = eye * mask[..., None, :] * mask[..., :, None]
        adj = adj * mask[..., None, :] * mask[..., :, None]
    a = adj + eye
    deg = a.sum(axis=-1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


def graph_conv(z: Tensor, adj, w: Tensor, mask=None, normalized: bool = False) -> Tensor:
    """``tanh(D^-1 (A + I) Z W)``; batched when ``z`` is (B, N, F)."""
    z = as_tensor(z)
    if z.shape[-1] != w.shape[0]:
        raise ShapeError(f"graph_conv: features have width {z.shape[-1]}, weights expect {w.shape[0]}")
    a_norm = np.asarray(adj) if normalized else normalized_adjacency(adj, mask)
    if a_norm.shape[-1] != z.shape[-2]:
        raise ShapeError("graph_conv: adjacency and feature node counts differ")
    return tanh(matmul(Tensor(a_norm.astype(z.dtype)), matmul(z, w)))


def sort_order(feats: np.ndarray, n_valid: int) -> np.ndarray:
    """Row order: last column descending, ties by columns leftward, then position."""
    f = feats[:n_valid]
    keys = [np.arange(n_valid)] + [-f[:, c] for c in range(f.shape[1])]
    return np.lexsort(keys)


def sort_pool(z: Tensor, k: int, mask=None) -> Tensor:
    """Keep the top ``k`` rows per graph under :func:`sort_order`; zero-pad short graphs.

    ``z`` is (N, F) or (B, N, F); ``mask`` marks real (non-padding) nodes,
    which must come first in each graph.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    squeeze = z.ndim == 2
    zd = z.data[None] if squeeze else z.data
    B, N, F = zd.shape
    counts = np.full(B, N) if mask is None else np.asarray(mask, dtype=bool).reshape(B, N).sum(axis=1)
    rows = np.zeros((B, k), dtype=np.int64)
    valid = np.zeros((B, k), dtype=bool)
    for b in range(B):
        order = sort_order(zd[b], int(counts[b]))[:k]
        rows[b, :order.size] = order
        valid[b, :order.size] = True
    bidx = np.arange(B)[:, None]
    out = zd[bidx, rows] * valid[..., None]

    def backward(g):
        g3 = g[None] if squeeze else g
        gz = np.zeros_like(zd)
        np.add.at(gz, (np.broadcast_to(bidx, rows.shape)[valid], rows[valid]), g3[valid])
        _accumulate(z, gz[0] if squeeze else gz)

    return make(out[0] if squeeze else out, (z,), backward)


def dropout(x: Tensor, rate: float, rng, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when ``rate`` is 0 or outside training."""
    if not training or rate <= 0:
        return x
    if rate >= 1:
        raise ValueError("dropout rate must be below 1")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * keep)

    return make(x.data * keep, (x,), backward)


# -- loss --------------------------------------------------------------------

def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean of ``max(z, 0) - z*y + log(1 + exp(-|z|))``."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)

    def backward(g):
        _accumulate(logits, g * (sigmoid_np(z) - y) / n)

    return make(np.asarray(loss.mean()), (logits,), backward)
