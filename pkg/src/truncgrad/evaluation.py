"""Metrics, parameter sweeps and k-fold model selection."""

from __future__ import annotations

import csv
import itertools
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import SparseExample, substream
from .learner import ConfigError, DivergenceError, LearnerConfig, link, train
from .loss import LossKind, loss_functions


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Area under the ROC curve via the rank-sum statistic, ties counted one half.

    ``labels`` are +-1. Raises ``ValueError`` unless both classes are present.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y > 0
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[float], threshold: float = 0.0) -> float:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    pred = np.where(s > threshold, 1.0, -1.0)
    return float(np.mean(pred == y))


def mean_loss(scores: Sequence[float], labels: Sequence[float], kind: LossKind = LossKind.SQUARE) -> float:
    value, _ = loss_functions(kind)
    return float(np.mean([value(p, y) for p, y in zip(scores, labels)]))


def predict_scores(weights: dict[int, float], examples: Sequence[SparseExample], cfg: LearnerConfig | None = None) -> list[float]:
    out = []
    for ex in examples:
        raw = 0.0
        for j, v in ex.features:
            w = weights.get(j)
            if w is not None:
                raw += w * v
        out.append(link(raw, ex.nnz, cfg))
    return out


def evaluate(weights: dict[int, float], examples: Sequence[SparseExample], cfg: LearnerConfig) -> dict[str, float]:
    """AUC (if both classes occur), accuracy and mean loss of a model on labeled examples."""
    scores = predict_scores(weights, examples, cfg)
    labels = [ex.label for ex in examples]
    clipped = cfg.vw_clip and cfg.loss is LossKind.SQUARE
    threshold = 0.5 if clipped else 0.0
    targets = [(y + 1.0) / 2.0 for y in labels] if clipped else labels
    out = {"auc": math.nan, "accuracy": math.nan, "loss": mean_loss(scores, targets, cfg.loss)}
    if set(labels) <= {1.0, -1.0}:
        out["accuracy"] = accuracy(scores, labels, threshold)
        if len(set(labels)) == 2:
            out["auc"] = auc(scores, labels)
    return out


# -- sweeps ----------------------------------------------------------------


@dataclass
class SweepResult:
    param: str
    value: float
    cfg: LearnerConfig
    auc: float = math.nan
    accuracy: float = math.nan
    loss: float = math.nan
    nnz: int = 0
    auc_ratio: float = math.nan
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _fit_and_score(args) -> tuple[dict[str, float], int, str]:
    train_set, test_set, cfg = args
    try:
        res = train(train_set, cfg)
    except (DivergenceError, ConfigError) as exc:
        return {}, 0, str(exc)
    w = res.weights
    return evaluate(w, test_set, cfg), len(w), ""


def _run_jobs(tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [_fit_and_score(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit_and_score, tasks))


def sparsity_frontier(
    train_set: Sequence[SparseExample],
    test_set: Sequence[SparseExample],
    base: LearnerConfig,
    values: Sequence[float],
    param: str = "g",
    jobs: int = 1,
) -> list[SweepResult]:
    """Train once per value of ``param`` (``g`` or ``theta``) and score the final weights.

    The zero value is always included and serves as the baseline for
    ``auc_ratio``. Results come back sorted by nonzero count; failed grid
    points carry an ``error`` message and sort last.
    """
    if param not in ("g", "theta"):
        raise ValueError("param must be 'g' or 'theta'")
    grid = sorted({float(v) for v in values} | {0.0})
    cfgs = []
    for v in grid:
        try:
            cfgs.append(base.replace(**{param: v}))
        except ConfigError as exc:
            cfgs.append(exc)
    tasks = [(train_set, test_set, c) for c in cfgs if isinstance(c, LearnerConfig)]
    outputs = iter(_run_jobs(tasks, jobs))
    results = []
    for v, c in zip(grid, cfgs):
        if isinstance(c, ConfigError):
            results.append(SweepResult(param, v, base, error=str(c)))
            continue
        metrics, nnz, err = next(outputs)
        results.append(SweepResult(param, v, c, nnz=nnz, error=err, **metrics))
    baseline = results[0]
    for r in results:
        if not r.failed and not baseline.failed and baseline.auc > 0:
            r.auc_ratio = r.auc / baseline.auc
    results.sort(key=lambda r: (r.failed, r.nnz, r.value))
    return results


SWEEP_COLUMNS = ("param", "value", "rule", "eta", "g", "theta", "K", "loss", "passes", "auc", "accuracy", "loss_mean", "nnz", "auc_ratio", "error")


def write_sweep_csv(path: str | Path, results: Sequence[SweepResult]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SWEEP_COLUMNS)
        for r in results:
            c = r.cfg
            out.writerow(
                [r.param, repr(r.value), c.rule.value, repr(c.eta), repr(c.g), repr(c.theta), c.K, c.loss.value, c.passes]
                + [repr(float(x)) for x in (r.auc, r.accuracy, r.loss)]
                + [r.nnz, repr(float(r.auc_ratio)), r.error]
            )


# -- cross validation ------------------------------------------------------


@dataclass
class CvPlan:
    """Grid and selection rule for k-fold model selection.

    With ``tolerance > 0`` every config within ``tolerance`` of the best mean
    metric is acceptable and the sparsest one wins (absolute for AUC and
    accuracy, relative for loss).
    """

    folds: int = 10
    etas: Sequence[float] = (0.1,)
    gs: Sequence[float] = (0.0,)
    passes: Sequence[int] = (1,)
    pass_lr_decays: Sequence[float] = (1.0,)
    metric: str = "accuracy"
    tolerance: float = 0.0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.metric not in ("auc", "accuracy", "loss"):
            raise ValueError(f"unknown selection metric {self.metric!r}")
        if not all((self.etas, self.gs, self.passes, self.pass_lr_decays)):
            raise ValueError("empty grid")

    def configs(self, base: LearnerConfig) -> list[LearnerConfig]:
        return [
            base.replace(eta=e, g=g, passes=p, pass_lr_decay=d)
            for e, g, p, d in itertools.product(self.etas, self.gs, self.passes, self.pass_lr_decays)
        ]


@dataclass
class CvEntry:
    cfg: LearnerConfig
    fold_metrics: list[float] = field(default_factory=list)
    fold_nnz: list[int] = field(default_factory=list)
    error: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_metrics)) if self.fold_metrics and not self.error else math.nan

    @property
    def mean_nnz(self) -> float:
        return float(np.mean(self.fold_nnz)) if self.fold_nnz else math.nan


@dataclass
class CvResult:
    best: LearnerConfig
    entries: list[CvEntry]


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Partition ``range(n)`` into ``folds`` sorted index arrays, deterministic in ``seed``."""
    perm = substream(seed, "folds").permutation(n)
    return [np.sort(perm[k::folds]) for k in range(folds)]


def cross_validate(
    examples: Sequence[SparseExample],
    plan: CvPlan,
    base: LearnerConfig,
    seed: int = 0,
    jobs: int = 1,
) -> CvResult:
    """Score every grid config by k-fold CV and pick one.

    Without tolerance the best mean metric wins and ties go to the larger
    ``g``. With tolerance the sparsest acceptable config wins.
    """
    examples = list(examples)
    if len(examples) < plan.folds:
        raise ValueError("fewer examples than folds")
    parts = fold_assignment(len(examples), plan.folds, seed)
    configs = plan.configs(base)
    tasks = []
    for cfg in configs:
        for k in range(plan.folds):
            held = set(parts[k].tolist())
            tr = [ex for i, ex in enumerate(examples) if i not in held]
            te = [examples[i] for i in parts[k]]
            tasks.append((tr, te, cfg))
    outputs = _run_jobs(tasks, jobs)

    entries = []
    for c, cfg in enumerate(configs):
        entry = CvEntry(cfg)
        for metrics, nnz, err in outputs[c * plan.folds : (c + 1) * plan.folds]:
            if err:
                entry.error = err
                break
            entry.fold_metrics.append(metrics[plan.metric])
            entry.fold_nnz.append(nnz)
        entries.append(entry)

    ok = [(i, e) for i, e in enumerate(entries) if not e.error and not math.isnan(e.mean)]
    if not ok:
        raise RuntimeError("every grid point failed")
    lower_is_better = plan.metric == "loss"
    means = [e.mean for _, e in ok]
    best = min(means) if lower_is_better else max(means)
    if plan.tolerance > 0:
        if lower_is_better:
            keep = [(i, e) for i, e in ok if e.mean <= best * (1.0 + plan.tolerance)]
        else:
            keep = [(i, e) for i, e in ok if e.mean >= best - plan.tolerance]
        chosen = min(keep, key=lambda t: (t[1].mean_nnz, -t[1].cfg.g, t[0]))
    else:
        keep = [(i, e) for i, e in ok if e.mean == best]
        chosen = min(keep, key=lambda t: (-t[1].cfg.g, t[1].mean_nnz, t[0]))
    return CvResult(chosen[1].cfg, entries)


def write_cv_csv(path: str | Path, result: CvResult, metric: str) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("eta", "g", "passes", "pass_lr_decay", f"mean_{metric}", "mean_nnz", "selected", "error"))
        for e in result.entries:
            c = e.cfg
            out.writerow(
                [repr(c.eta), repr(c.g), c.passes, repr(c.pass_lr_decay), repr(e.mean), repr(e.mean_nnz), int(c == result.best), e.error]
            )


__all__ = [
    "CvPlan",
    "CvResult",
    "SweepResult",
    "accuracy",
    "auc",
    "cross_validate",
    "evaluate",
    "fold_assignment",
    "mean_loss",
    "predict_scores",
    "sparsity_frontier",
    "write_cv_csv",
    "write_sweep_csv",
]
