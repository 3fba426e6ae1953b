"""Independent float64 reference implementations used as test oracles.

Everything here is written with plain loops or direct formulas and shares no
code with the package, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools

import numpy as np


# ---------------------------------------------------------------------------
# layers


def conv2d_same(x, k, b, stride=1):
    """N×H×W×C cross-correlation with TF-style 'same' padding, by loops."""
    n, h, w, c = x.shape
    kh, kw, _, f = k.shape
    ho, wo = -(-h // stride), -(-w // stride)
    ph = max((ho - 1) * stride + kh - h, 0)
    pw = max((wo - 1) * stride + kw - w, 0)
    top, left = ph // 2, pw // 2
    out = np.zeros((n, ho, wo, f))
    for i in range(ho):
        for j in range(wo):
            for di in range(kh):
                for dj in range(kw):
                    r, s = i * stride + di - top, j * stride + dj - left
                    if 0 <= r < h and 0 <= s < w:
                        out[:, i, j, :] += x[:, r, s, :] @ k[di, dj]
    return out + b


def conv2d_valid(x, k, b):
    n, h, w, c = x.shape
    kh, kw, _, f = k.shape
    out = np.zeros((n, h - kh + 1, w - kw + 1, f))
    for i in range(h - kh + 1):
        for j in range(w - kw + 1):
            patch = x[:, i:i + kh, j:j + kw, :].reshape(n, -1)
            out[:, i, j, :] = patch @ k.reshape(-1, f)
    return out + b


def maxpool(x, window=2, stride=2):
    n, h, w, c = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.empty((n, ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            out[:, i, j, :] = x[:, i * stride:i * stride + window, j * stride:j * stride + window, :].max(axis=(1, 2))
    return out


def batchnorm_train(x, gamma, beta, eps=1e-3):
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    var = ((x - mu) ** 2).mean(axis=axes)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def batchnorm_infer(x, gamma, beta, mean, var, eps=1e-3):
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def dense(x, w, b):
    return x @ w + b


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def tiny_cnn(x, k1, b1, g1, be1, w2, b2):
    """conv(same)+relu -> maxpool -> batchnorm(train) -> flatten -> dense -> softmax."""
    h = relu(conv2d_same(x, k1, b1))
    h = maxpool(h)
    h = batchnorm_train(h, g1, be1)
    h = h.reshape(h.shape[0], -1)
    return softmax(dense(h, w2, b2))


# ---------------------------------------------------------------------------
# derivatives


def central_difference(f, args, index, eps=1e-3):
    """d f(*args) / d args[index] by central differences in float64."""
    args = [np.array(a, dtype=np.float64) for a in args]
    target = args[index]
    grad = np.zeros_like(target)
    for pos in np.ndindex(target.shape):
        orig = target[pos]
        target[pos] = orig + eps
        hi = f(*args)
        target[pos] = orig - eps
        lo = f(*args)
        target[pos] = orig
        grad[pos] = (hi - lo) / (2 * eps)
    return grad


def rel_error(analytic, numeric) -> float:
    """max |a - n| / max |n| (absolute when the reference is ~0)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.abs(numeric).max()
    err = np.abs(analytic - numeric).max()
    return float(err / scale) if scale > 1e-8 else float(err)


# ---------------------------------------------------------------------------
# metrics and fairness


def pairwise_auc(scores, labels) -> float:
    """O(n^2) count over (positive, negative) pairs, ties worth one half."""
    scores = list(map(float, scores))
    labels = list(map(int, labels))
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, q in itertools.product(pos, neg):
        total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def gfnr(scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    return float(np.mean(1.0 - s[y]))


def gfpr(scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    return float(np.mean(s[~y]))


def grid_mix_probability(low_scores, low_labels, high_cost, cost="fnr", fnr_weight=0.5, resolution=1e-3):
    """Search p on a grid so mixing the low-cost group toward its base rate matches ``high_cost``.

    The mixed cost is evaluated from its definition: with probability p a
    score becomes the base rate mu, so every generalized rate is the
    (1 - p, p) average of the original and trivial predictor's rates.
    """
    s = np.asarray(low_scores, dtype=np.float64)
    y = np.asarray(low_labels).astype(bool)
    mu = y.mean()

    def group_cost(scores):
        fn, fp = np.mean(1 - scores[y]), np.mean(scores[~y])
        if cost == "fnr":
            return fn
        if cost == "fpr":
            return fp
        return fnr_weight * fn + (1 - fnr_weight) * fp

    base = group_cost(s)
    trivial = group_cost(np.full_like(s, mu))
    grid = np.arange(0.0, 1.0 + resolution / 2, resolution)
    costs = (1 - grid) * base + grid * trivial
    return float(grid[np.argmin(np.abs(costs - high_cost))])
