"""Losses of a linear score ``p = w . x`` and their derivatives in ``p``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable


class LossKind(str, Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"
    HINGE = "hinge"

    @property
    def is_classification(self) -> bool:
        return self is not LossKind.SQUARE


class InvalidLabelError(ValueError):
    """Raised when a classification loss sees a label outside {-1, +1}."""


@dataclass(frozen=True)
class LossConstants:
    """Constants ``A``, ``B`` with ``|grad_w L|^2 <= A * L + B`` whenever ``||x|| <= C``."""

    A: float
    B: float
    C: float
    requires_feature_bound: bool = True


def _check_label(kind: LossKind, y: float) -> None:
    if kind is not LossKind.SQUARE and y != 1.0 and y != -1.0:
        raise InvalidLabelError(f"{kind.value} loss needs a label in {{-1, +1}}, got {y!r}")


def _square_value(p: float, y: float) -> float:
    r = p - y
    return r * r


def _square_grad(p: float, y: float) -> float:
    return 2.0 * (p - y)


def _logistic_value(p: float, y: float) -> float:
    m = p * y
    # ln(1 + exp(-m)) without overflow for large |m|
    if m > 0:
        return math.log1p(math.exp(-m))
    return -m + math.log1p(math.exp(m))


def _logistic_grad(p: float, y: float) -> float:
    m = p * y
    if m >= 0:
        e = math.exp(-m)
        return -y * e / (1.0 + e)
    return -y / (1.0 + math.exp(m))


def _hinge_value(p: float, y: float) -> float:
    return max(0.0, 1.0 - p * y)


def _hinge_grad(p: float, y: float) -> float:
    return -y if p * y < 1.0 else 0.0


_FUNCTIONS = {
    LossKind.SQUARE: (_square_value, _square_grad),
    LossKind.LOGISTIC: (_logistic_value, _logistic_grad),
    LossKind.HINGE: (_hinge_value, _hinge_grad),
}


def loss_functions(kind: LossKind) -> tuple[Callable[[float, float], float], Callable[[float, float], float]]:
    """Unchecked ``(value, derivative)`` pair for hot loops; labels are not validated."""
    return _FUNCTIONS[LossKind(kind)]


def loss_value(kind: LossKind, p: float, y: float) -> float:
    kind = LossKind(kind)
    _check_label(kind, y)
    return _FUNCTIONS[kind][0](p, y)


def loss_gradient_score(kind: LossKind, p: float, y: float) -> float:
    """Derivative of the loss in the score ``p``.

    For hinge loss the kink ``p * y == 1`` takes the flat-side subgradient 0.
    Multiply by ``x`` to get the gradient in weight space.
    """
    kind = LossKind(kind)
    _check_label(kind, y)
    return _FUNCTIONS[kind][1](p, y)


def assumption_constants(kind: LossKind, C: float) -> LossConstants:
    """Return the gradient-growth constants for ``kind`` under ``sup ||x|| <= C``.

    Square loss gives ``A = 4 C^2, B = 0``; logistic and hinge give
    ``A = 0, B = C^2``.
    """
    kind = LossKind(kind)
    if not C > 0 or not math.isfinite(C):
        raise ValueError(f"feature bound C must be positive and finite, got {C!r}")
    if kind is LossKind.SQUARE:
        return LossConstants(A=4.0 * C * C, B=0.0, C=C)
    return LossConstants(A=0.0, B=C * C, C=C)
