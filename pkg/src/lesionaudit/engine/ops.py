"""Differentiable primitives.

Image tensors are channels-last: ``H×W×C`` for a single image or
``N×H×W×C`` for a batch. Every function returns a new :class:`Tensor` and,
when a :class:`GradTape` is active, records a vector-Jacobian product for it.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, record

F32 = np.float32


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data + b.data)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return record("add", (a, b), out, vjp)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data - b.data)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return record("sub", (a, b), out, vjp)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data * b.data)

    def vjp(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return record("mul", (a, b), out, vjp)


def neg(a) -> Tensor:
    a = _t(a)
    out = Tensor(-a.data)
    return record("neg", (a,), out, lambda g, needs: (-g,))


def square(a) -> Tensor:
    a = _t(a)
    out = Tensor(a.data * a.data)
    return record("square", (a,), out, lambda g, needs: (2.0 * a.data * g,))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log; inputs below ``floor`` are clamped and receive zero gradient."""
    a = _t(a)
    if floor > 0:
        clipped = np.maximum(a.data, F32(floor))
        live = a.data >= floor
    else:
        clipped, live = a.data, None
    out = Tensor(np.log(clipped))

    def vjp(g, needs):
        gi = g / clipped
        return (gi if live is None else np.where(live, gi, 0).astype(F32),)

    return record("log", (a,), out, vjp)


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _t(a)
    out = Tensor(a.data.sum(axis=axis, dtype=np.float64).astype(F32))

    def vjp(g, needs):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(F32),)

    return record("sum", (a,), out, vjp)


def mean(a, axis=None) -> Tensor:
    a = _t(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), F32(1.0 / n))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    out = Tensor(a.data.reshape(shape))
    return record("reshape", (a,), out, lambda g, needs: (g.reshape(a.shape),))


def flatten(a) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    a = _t(a)
    return reshape(a, (a.shape[0], -1))


def pick(a, index) -> Tensor:
    """Row-wise gather: ``out[i] = a[i, index[i]]`` for a 2-D ``a``."""
    a = _t(a)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, index])

    def vjp(g, needs):
        ga = np.zeros(a.shape, dtype=F32)
        np.add.at(ga, (rows, index), g)
        return (ga,)

    return record("pick", (a,), out, vjp)


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g, needs):
        return (g @ b.data.T if needs[0] else None,
                a.data.T @ g if needs[1] else None)

    return record("matmul", (a, b), out, vjp)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, F32(0)))
    return record("relu", (a,), out, lambda g, needs: (np.where(mask, g, F32(0)),))


def sigmoid(a) -> Tensor:
    a = _t(a)
    x = a.data.astype(np.float64)
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    s = s.astype(F32)
    out = Tensor(s)
    return record("sigmoid", (a,), out, lambda g, needs: (g * s * (F32(1) - s),))


def softmax(a) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=-1, keepdims=True)).astype(F32)
    out = Tensor(p)

    def vjp(g, needs):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("softmax", (a,), out, vjp)


# ---------------------------------------------------------------------------
# layers


def dense(x, weights, bias) -> Tensor:
    """Affine map over the last axis: ``x @ W + b`` for ``x`` of shape N or B×N."""
    x, weights, bias = _t(x), _t(weights), _t(bias)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"dense: bias shape {bias.shape} does not match {weights.shape[1]} units")
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    y = xd @ weights.data + bias.data
    out = Tensor(y[0] if single else y)

    def vjp(g, needs):
        g2 = g[None, :] if single else g
        gx = gw = gb = None
        if needs[0]:
            gx = g2 @ weights.data.T
            gx = gx[0] if single else gx
        if needs[1]:
            gw = xd.T @ g2
        if needs[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    return record("dense", (x, weights, bias), out, vjp)


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x, kernels, bias, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation, channels-last.

    ``x`` is H×W×C or N×H×W×C, ``kernels`` Kh×Kw×C×F, ``bias`` F.
    ``padding='same'`` pads like TensorFlow (extra row/column at the end).
    """
    x, kernels, bias = _t(x), _t(kernels), _t(bias)
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ValueError(f"conv2d: stride must be a positive int, got {stride!r}")
    if padding not in ("same", "valid"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if kernels.ndim != 4:
        raise ValueError(f"conv2d: kernels must be Kh×Kw×C×F, got {kernels.shape}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d: input must be H×W×C or N×H×W×C, got {x.shape}")
    kh, kw, c, f = kernels.shape
    if xd.shape[-1] != c:
        raise ValueError(f"conv2d: input has {xd.shape[-1]} channels, kernels expect {c}")
    if bias.shape != (f,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    n, h, w, _ = xd.shape
    if padding == "same":
        pt, pb = _same_pads(h, kh, stride)
        pl, pr = _same_pads(w, kw, stride)
    else:
        pt = pb = pl = pr = 0
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else xd
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ValueError(f"conv2d: kernel {kh}×{kw} larger than padded input {hp}×{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (n, ho, wo, c, kh, kw) -> (n*ho*wo, kh*kw*c) matching kernel layout
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)
    kmat = kernels.data.reshape(kh * kw * c, f)
    y = (cols @ kmat + bias.data).reshape(n, ho, wo, f)
    out = Tensor(y[0] if single else y)

    def vjp(g, needs):
        g4 = (g[None] if single else g).reshape(n * ho * wo, f)
        gx = gk = gb = None
        if needs[1]:
            gk = (cols.T @ g4).reshape(kh, kw, c, f)
        if needs[2]:
            gb = g4.sum(axis=0)
        if needs[0]:
            dcols = (g4 @ kmat.T).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros((n, hp, wp, c), dtype=F32)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, pt:pt + h, pl:pl + w, :]
            gx = gx[0] if single else gx
        return gx, gk, gb

    return record("conv2d", (x, kernels, bias), out, vjp)


def maxpool2d(x, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling with floor semantics (trailing rows/columns dropped)."""
    x = _t(x)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    n, h, w, c = xd.shape
    if h < window or w < window:
        raise ValueError(f"maxpool2d: window {window} larger than input {h}×{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(xd, (window, window), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    flat = win.reshape(n, ho, wo, c, window * window)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if single else y)

    def vjp(g, needs):
        g4 = g[None] if single else g
        gx = np.zeros((n, h, w, c), dtype=F32)
        di, dj = np.divmod(arg, window)
        nn, ii, jj, cc = np.indices((n, ho, wo, c), sparse=True)
        np.add.at(gx, (nn, ii * stride + di, jj * stride + dj, cc), g4)
        return (gx[0] if single else gx,)

    return record("maxpool2d", (x,), out, vjp)


class BatchNormOutput(NamedTuple):
    output: Tensor
    moving_mean: Tensor
    moving_var: Tensor


def batchnorm(x, gamma, beta, moving_mean, moving_var, eps: float = 1e-3,
              mode: str = "infer", momentum: float = 0.99) -> BatchNormOutput:
    """Batch normalization over the last (channel) axis.

    ``infer`` applies the fixed affine map from the moving statistics.
    ``train`` normalizes with the batch statistics (biased variance) and
    returns exponentially averaged moving statistics alongside the output.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    moving_mean, moving_var = _t(moving_mean), _t(moving_var)
    c = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta), ("moving_mean", moving_mean), ("moving_var", moving_var)):
        if p.shape != (c,):
            raise ValueError(f"batchnorm: {name} has shape {p.shape}, expected ({c},)")
    if mode == "infer":
        denom = moving_var.data.astype(np.float64) + eps
        if np.any(denom <= 0):
            raise ValueError("batchnorm: moving_var + eps must be positive")
        inv = (1.0 / np.sqrt(denom)).astype(F32)
        xhat = (x.data - moving_mean.data) * inv
        out = Tensor(xhat * gamma.data + beta.data)
        axes = tuple(range(x.ndim - 1))

        def vjp(g, needs):
            return (g * (gamma.data * inv) if needs[0] else None,
                    (g * xhat).sum(axis=axes) if needs[1] else None,
                    g.sum(axis=axes) if needs[2] else None)

        record("batchnorm", (x, gamma, beta), out, vjp)
        return BatchNormOutput(out, moving_mean, moving_var)
    if mode != "train":
        raise ValueError(f"batchnorm: unknown mode {mode!r}")

    axes = tuple(range(x.ndim - 1))
    m = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    mu = x.data.mean(axis=axes, dtype=np.float64)
    var = x.data.var(axis=axes, dtype=np.float64)
    if np.any(var + eps <= 0):
        raise ValueError("batchnorm: var + eps must be positive")
    inv = (1.0 / np.sqrt(var + eps)).astype(F32)
    xhat = ((x.data - mu.astype(F32)) * inv).astype(F32)
    out = Tensor(xhat * gamma.data + beta.data)

    def vjp(g, needs):
        gx = None
        if needs[0]:
            gxhat = g * gamma.data
            gx = (inv / m) * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        return (gx,
                (g * xhat).sum(axis=axes) if needs[1] else None,
                g.sum(axis=axes) if needs[2] else None)

    record("batchnorm", (x, gamma, beta), out, vjp)
    new_mean = Tensor(momentum * moving_mean.data + (1 - momentum) * mu)
    new_var = Tensor(momentum * moving_var.data + (1 - momentum) * var)
    return BatchNormOutput(out, new_mean, new_var)


def dropout(x, rate: float, mode: str = "infer", seed: int | None = None) -> Tensor:
    """Inverted dropout; identity outside training."""
    x = _t(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"dropout: unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    scale = F32(1.0 / (1.0 - rate))
    mask = keep.astype(F32) * scale
    out = Tensor(x.data * mask)
    return record("dropout", (x,), out, lambda g, needs: (g * mask,))
