"""Elementwise truncation operators used by every sparsification rule.

All functions here are scalar and pure. Weights that land on zero are
returned as exact ``0.0`` so callers can drop them from sparse storage.
"""

from __future__ import annotations

import math

INF = math.inf


def truncate_round(v: float, theta: float) -> float:
    """Hard threshold: zero out ``v`` when ``|v| <= theta``, else keep it."""
    if abs(v) <= theta:
        return 0.0
    return v


def truncate_gravity(v: float, alpha: float, theta: float = INF) -> float:
    """Shrink ``v`` toward zero by ``alpha`` if it lies inside ``[-theta, theta]``.

    The result never crosses zero. With ``theta = inf`` every coordinate is
    shrunk, which is the plain L1 truncation. The boundary ``|v| == theta``
    belongs to the shrinkage region.
    """
    if 0.0 <= v <= theta:
        return max(0.0, v - alpha)
    if -theta <= v < 0.0:
        return min(0.0, v + alpha)
    return v


def gravity_schedule(i: int, K: int, g: float) -> float:
    """Gravity for step ``i``: ``K * g`` when ``K`` divides ``i``, zero otherwise."""
    if i % K == 0:
        return K * g
    return 0.0
