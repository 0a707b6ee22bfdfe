"""Dense eager reference learner.

Applies the scheduled truncation to every coordinate at every step, which
is the definition the lazy learner has to reproduce. Meant for test
oracles and small verification runs, not for large dimensions.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .data import SparseExample
from .learner import (
    DivergenceError,
    LearnerConfig,
    Rule,
    RunTrace,
    drive,
    link,
    step_eta,
    training_target,
)
from .loss import loss_functions
from .truncation import gravity_schedule


def truncate_gravity_dense(v: np.ndarray, alpha: float, theta: float) -> np.ndarray:
    out = v.copy()
    pos = (v >= 0.0) & (v <= theta)
    out[pos] = np.maximum(0.0, v[pos] - alpha)
    neg = (v < 0.0) & (v >= -theta)
    out[neg] = np.minimum(0.0, v[neg] + alpha)
    return out


class EagerLearner:
    """Same step semantics as :class:`~truncgrad.learner.SparseLearner` on a dense vector."""

    def __init__(self, cfg: LearnerConfig, dim: int, record: bool = False):
        self.cfg = cfg
        self.w = np.zeros(dim)
        self.trace = RunTrace()
        self.pass_index = 0
        self.step_count = 0
        self.snapshots: list[np.ndarray] | None = [] if record else None
        self._avg_sum = np.zeros(dim) if cfg.average else None
        self._value, self._grad = loss_functions(cfg.loss)

    def _truncate(self, alpha: float) -> None:
        cfg = self.cfg
        w = self.w
        if cfg.rule is Rule.TRUNCATED_GRADIENT:
            self.w = truncate_gravity_dense(w, alpha, cfg.theta)
        elif cfg.rule is Rule.SUBGRADIENT_L1:
            self.w = w - alpha * np.sign(w)
        else:
            out = w.copy()
            out[np.abs(w) <= cfg.theta] = 0.0
            self.w = out

    def step(self, ex: SparseExample, example_index: int = -1) -> float:
        cfg = self.cfg
        i = self.step_count + 1
        eta = cfg.eta if cfg.constant_eta else step_eta(cfg, i, self.pass_index)
        g_i = gravity_schedule(i, cfg.K, cfg.g)
        removed = 0.0
        if i % cfg.K == 0:
            before = self.w
            self._truncate(eta * g_i)
            removed = float(np.abs(before - self.w).sum())
        w = self.w
        if self.snapshots is not None:
            self.snapshots.append(w.copy())
        if self._avg_sum is not None:
            self._avg_sum += w

        raw = 0.0
        for j, xj in ex.features:
            raw += float(w[j]) * xj
        k = ex.nnz
        p = link(raw, k, cfg)
        target = training_target(ex.label, cfg)
        loss = self._value(p, target)
        d = self._grad(p, target)
        if cfg.vw_normalize and k:
            d /= math.sqrt(k)
        coef = eta * d
        if not (math.isfinite(coef) and math.isfinite(loss)):
            raise DivergenceError(i)
        for j, xj in ex.features:
            w[j] = float(w[j]) - coef * xj

        self.step_count = i
        self.trace.append(i, example_index, loss, eta, g_i, int(np.count_nonzero(w)), removed)
        return loss


@dataclass
class EagerResult:
    w: np.ndarray
    trace: RunTrace
    snapshots: np.ndarray | None = None
    averaged: np.ndarray | None = None

    @property
    def weights(self) -> dict[int, float]:
        return {int(j): float(self.w[j]) for j in np.flatnonzero(self.w)}


def eager_reference_train(
    stream: Iterable[SparseExample],
    cfg: LearnerConfig,
    dim: int | None = None,
    record: bool = False,
) -> EagerResult:
    """Dense counterpart of :func:`~truncgrad.learner.train`.

    With ``record=True`` the result carries ``snapshots`` of shape
    ``(T + 1, dim)``: the prediction weights of steps ``1..T`` followed by
    the weights after the last gradient step.
    """
    if dim is None:
        if not isinstance(stream, Sequence):
            stream = list(stream)
        dim = max((ex.max_index() for ex in stream), default=-1) + 1
    learner = EagerLearner(cfg, dim, record=record)
    drive(learner, stream, cfg)
    snaps = None
    if record:
        snaps = np.vstack(learner.snapshots + [learner.w.copy()])
    averaged = None
    if learner._avg_sum is not None:
        averaged = learner._avg_sum / learner.step_count
    w = learner.w
    if cfg.final_threshold > 0.0:
        w = np.where(np.abs(w) <= cfg.final_threshold, 0.0, w)
    return EagerResult(w, learner.trace, snaps, averaged)
