"""Image-shaped fused ops: 2-D convolution and batch normalization.

These are single graph nodes with hand-written backwards rather than
compositions of tensor primitives; an im2col convolution composed from
slice/concat nodes would build thousands of tiny nodes per call.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class RunningStatsError(RuntimeError):
    """Eval-mode batch norm was asked for statistics it never accumulated."""


def conv2d(x: Tensor, w: Tensor, bias=None, stride: int = 1) -> Tensor:
    """Same-padded convolution of [N,C,H,W] by [Cout,C,kh,kw], via im2col.

    Padding is (k-1)//2 per side, so stride 1 preserves H,W and stride 2
    halves even dims.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weights")
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise ShapeError("conv2d: input has %d channels, weights expect %d" % (c, cin))
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(cout, c * kh * kw)
    out2 = cols @ wmat.T
    if bias is not None:
        if bias.data.ndim != 1 or bias.shape[0] != cout:
            raise ShapeError("conv2d: bias must have shape (%d,)" % cout)
        out2 = out2 + bias.data
    out = out2.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = g2 @ wmat
        dwin = dcols.reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                    dwin[:, :, :, :, ki, kj].transpose(0, 3, 1, 2))
        dx = dxp[:, :, ph:ph + h, pw:pw + wd]
        if bias is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor(out, _parents=parents, _backward=back)


class BNState:
    """Running statistics for one batch-norm layer.

    ``num_batches`` doubles as the trained/untrained flag: eval before the
    first training pass has no statistics to use and is an error.
    """

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.num_batches = 0
        self.momentum = float(momentum)

    def update(self, mean, var):
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var
        self.num_batches += 1


def _batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
               training: bool, eps: float, axes, shape_bc) -> Tensor:
    c = gamma.shape[0]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mu, var)
    else:
        if state.num_batches == 0:
            raise RunningStatsError(
                "batch norm eval requested before any training pass accumulated statistics")
        mu, var = state.running_mean, state.running_var
    mu_b = mu.reshape(shape_bc)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape_bc)
    xhat = (x.data - mu_b) * inv
    out = xhat * gamma.data.reshape(shape_bc) + beta.data.reshape(shape_bc)

    def back(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        scale = gamma.data.reshape(shape_bc) * inv
        if training:
            # batch statistics depend on x, so the mean terms flow back too
            m = g.size // c
            dx = scale * (g - g.mean(axis=axes, keepdims=True)
                          - xhat * (g * xhat).sum(axis=axes, keepdims=True) / m)
        else:
            dx = scale * g
        return dx, dgamma, dbeta

    return Tensor(out, _parents=(x, gamma, beta), _backward=back)


def batchnorm_nchw(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                   training: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over [N,C,H,W]; stats over (N,H,W)."""
    if x.data.ndim != 4:
        raise ShapeError("batchnorm_nchw expects a 4-D tensor")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batchnorm_nchw: gamma/beta must match channel count")
    return _batchnorm(x, gamma, beta, state, training, float(eps),
                      axes=(0, 2, 3), shape_bc=(1, x.shape[1], 1, 1))


def batchnorm_rows(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                   training: bool, eps: float = 1e-5) -> Tensor:
    """Per-feature batch norm over [B,d]; stats over the batch axis."""
    if x.data.ndim != 2:
        raise ShapeError("batchnorm_rows expects a 2-D tensor")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batchnorm_rows: gamma/beta must match feature count")
    return _batchnorm(x, gamma, beta, state, training, float(eps),
                      axes=(0,), shape_bc=(1, x.shape[1]))
