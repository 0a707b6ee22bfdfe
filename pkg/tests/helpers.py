"""Independent oracles and stream builders shared by the tests."""

import math

import numpy as np

from truncgrad.data import SparseExample


def random_stream(n, d, k, seed, task="regression", scale=None):
    """``n`` examples with ``k`` distinct random indices below ``d``."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(k) if scale is None else scale
    out = []
    for _ in range(n):
        idx = np.sort(rng.choice(d, size=k, replace=False))
        vals = rng.standard_normal(k) * scale
        if task == "regression":
            y = float(rng.standard_normal())
        else:
            y = float(rng.choice([-1.0, 1.0]))
        out.append(SparseExample(y, tuple((int(j), float(v)) for j, v in zip(idx, vals) if v != 0.0)))
    return out


def score_grad(loss, p, y):
    if loss == "square":
        return 2.0 * (p - y)
    if loss == "logistic":
        return -y / (1.0 + math.exp(y * p))
    return -y if y * p < 1.0 else 0.0


def plain_gd(examples, eta, loss, dim, passes=1):
    """Unregularized online gradient descent written directly from its definition."""
    w = np.zeros(dim)
    for _ in range(passes):
        for ex in examples:
            x = np.zeros(dim)
            for j, v in ex.features:
                x[j] = v
            p = sum(w[j] * v for j, v in ex.features)
            w = w - eta * score_grad(loss, p, ex.label) * x
    return w


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y > 0]
    neg = [s for s, y in zip(scores, labels) if y <= 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def as_dense(weights, dim):
    w = np.zeros(dim)
    for j, v in weights.items():
        w[j] = v
    return w
