"""Numerical checks of the regret and convergence guarantees of truncated gradient.

Each checker evaluates both sides of an inequality from recorded run data
(per-step losses from the trace, weight snapshots, the examples) and
reports the margin ``rhs - lhs``. Nothing is assumed to vanish.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SparseExample, to_dense
from .learner import LearnerConfig, Rule, RunTrace, Sampling, sample_indices
from .loss import LossConstants, LossKind, assumption_constants
from .reference import eager_reference_train, truncate_gravity_dense

TOLERANCE = 1e-9
MAX_ORACLE_DIM = 50
MAX_ORACLE_N = 10_000


class VerificationError(ValueError):
    """Preconditions of a check are not met (missing constants, decaying rate, ...)."""


class SnapshotMismatchError(VerificationError):
    pass


@dataclass(frozen=True)
class RegretReport:
    check: str
    T: int
    lhs: float
    rhs: float
    comparator: str = ""
    eta: float = math.nan
    A: float = math.nan
    B: float = math.nan
    C: float = math.nan

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= -TOLERANCE


@dataclass
class RunRecord:
    """Everything a regret check needs from one constant-rate run.

    ``weights`` has ``T + 1`` rows: the prediction weights ``w_1..w_T`` and
    the weights after the final update. ``gravity[i]`` is the gravity
    applied at the start of step ``i + 1``.
    """

    X: np.ndarray
    y: np.ndarray
    losses: np.ndarray
    gravity: np.ndarray
    weights: np.ndarray
    eta: float
    theta: float
    loss: LossKind

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def transition_gravity(self) -> np.ndarray:
        # gravity that maps w_i to w_{i+1}; nothing is applied after the last step
        return np.append(self.gravity[1:], 0.0)

    @classmethod
    def from_run(
        cls,
        examples: Sequence[SparseExample],
        trace: RunTrace,
        snapshots: np.ndarray,
        cfg: LearnerConfig,
    ) -> "RunRecord":
        """Assemble a record from a trace (with example indices) and weight snapshots."""
        if cfg.rule is not Rule.TRUNCATED_GRADIENT:
            raise VerificationError("regret checks apply to the truncated gradient rule only")
        if cfg.vw_normalize or cfg.vw_clip:
            raise VerificationError("regret checks need plain predictions (no normalization or clipping)")
        etas = np.asarray(trace.eta)
        if len(etas) == 0:
            raise VerificationError("empty trace")
        if not np.all(etas == etas[0]):
            raise VerificationError("learning rate varies across the trace; the bounds assume a constant rate")
        T = len(trace)
        if snapshots.shape[0] != T + 1:
            raise SnapshotMismatchError(f"expected {T + 1} weight snapshots, got {snapshots.shape[0]}")
        if np.any(snapshots[0] != 0.0):
            raise VerificationError("the bounds assume the run starts from zero weights")
        dim = snapshots.shape[1]
        rows = [examples[k] for k in trace.example]
        if any(ex.max_index() >= dim for ex in rows):
            raise SnapshotMismatchError("examples use features beyond the snapshot dimension")
        X, y = to_dense(rows, dim)
        return cls(
            X=X,
            y=y,
            losses=np.asarray(trace.loss, dtype=float),
            gravity=np.asarray(trace.gravity, dtype=float),
            weights=np.asarray(snapshots, dtype=float),
            eta=float(etas[0]),
            theta=cfg.theta,
            loss=cfg.loss,
        )


def record_run(examples: Sequence[SparseExample], cfg: LearnerConfig, dim: int | None = None) -> RunRecord:
    """Run the dense reference learner with snapshots and wrap the result."""
    examples = list(examples)
    if dim is None:
        dim = max((ex.max_index() for ex in examples), default=-1) + 1
    res = eager_reference_train(examples, cfg, dim=dim, record=True)
    return RunRecord.from_run(examples, res.trace, res.snapshots, cfg)


# -- vectorized losses -----------------------------------------------------


def losses(kind: LossKind, p: np.ndarray, y: np.ndarray) -> np.ndarray:
    kind = LossKind(kind)
    if kind is LossKind.SQUARE:
        return (p - y) ** 2
    m = p * y
    if kind is LossKind.HINGE:
        return np.maximum(0.0, 1.0 - m)
    return np.logaddexp(0.0, -m)


def score_gradients(kind: LossKind, p: np.ndarray, y: np.ndarray) -> np.ndarray:
    kind = LossKind(kind)
    if kind is LossKind.SQUARE:
        return 2.0 * (p - y)
    m = p * y
    if kind is LossKind.HINGE:
        return np.where(m < 1.0, -y, 0.0)
    return -y * np.exp(-np.logaddexp(0.0, m))


def _masked_l1(v: np.ndarray, ref: np.ndarray, theta: float) -> np.ndarray:
    """Row-wise ``sum_j |v_j| * I(|ref_j| <= theta)``."""
    if math.isinf(theta):
        return np.abs(v).sum(axis=-1)
    return (np.abs(v) * (np.abs(ref) <= theta)).sum(axis=-1)


def _prefix(record: RunRecord, T: int | None) -> int:
    T = record.T if T is None else int(T)
    if not 1 <= T <= record.T:
        raise VerificationError(f"prefix {T} outside 1..{record.T}")
    return T


def check_theorem1(
    record: RunRecord,
    w_bar: np.ndarray,
    constants: LossConstants | None,
    T: int | None = None,
    comparator: str = "",
) -> RegretReport:
    """Sparse online regret bound over the first ``T`` steps, against comparator ``w_bar``."""
    if constants is None:
        raise VerificationError("loss constants A, B (and the feature bound C) are required")
    T = _prefix(record, T)
    eta, theta = record.eta, record.theta
    a = 1.0 - 0.5 * constants.A * eta
    if a <= 0.0:
        raise VerificationError(f"1 - A*eta/2 = {a} must be positive")
    w_bar = np.asarray(w_bar, dtype=float)
    h = record.transition_gravity[:T]
    w_next = record.weights[1 : T + 1]
    L = record.losses[:T]
    lhs = (a / T) * np.sum(L + (h / a) * _masked_l1(w_next, w_next, theta))
    Lbar = losses(record.loss, record.X[:T] @ w_bar, record.y[:T])
    pen = h * _masked_l1(np.broadcast_to(w_bar, w_next.shape), w_next, theta)
    rhs = 0.5 * eta * constants.B + w_bar @ w_bar / (2.0 * eta * T) + np.sum(Lbar + pen) / T
    return RegretReport("theorem1", T, float(lhs), float(rhs), comparator, eta, constants.A, constants.B, constants.C)


def check_corollary1(
    record: RunRecord,
    w_bar: np.ndarray,
    C: float | None,
    T: int | None = None,
    comparator: str = "",
) -> RegretReport:
    """Square-loss specialization, evaluated with the gravity indices as stated (g_i left, g_{i+1} right)."""
    if record.loss is not LossKind.SQUARE:
        raise VerificationError("the square-loss bound needs a square-loss run")
    if C is None:
        raise VerificationError("feature bound C is required")
    T = _prefix(record, T)
    norms = np.linalg.norm(record.X[:T], axis=1)
    # C from a scan is exact for python sums; allow for BLAS summation order
    if np.any(norms > C * (1.0 + 1e-12)):
        raise VerificationError(f"feature norm {norms.max():.6g} exceeds C = {C}")
    eta, theta = record.eta, record.theta
    c = 1.0 - 2.0 * C * C * eta
    if c <= 0.0:
        raise VerificationError(f"1 - 2 C^2 eta = {c} must be positive")
    w_bar = np.asarray(w_bar, dtype=float)
    w = record.weights[:T]
    w_next = record.weights[1 : T + 1]
    g = record.gravity[:T]
    g_next = record.transition_gravity[:T]
    L = record.losses[:T]
    lhs = (c / T) * np.sum(L + (g / c) * _masked_l1(w, w, theta))
    Lbar = (record.X[:T] @ w_bar - record.y[:T]) ** 2
    pen = g_next * _masked_l1(np.broadcast_to(w_bar, w_next.shape), w_next, theta)
    rhs = w_bar @ w_bar / (2.0 * eta * T) + np.sum(Lbar + pen) / T
    A = 4.0 * C * C
    return RegretReport("corollary1", T, float(lhs), float(rhs), comparator, eta, A, 0.0, C)


def check_lemma1(
    w: np.ndarray,
    x: np.ndarray,
    y: float,
    w_new: np.ndarray,
    g: float,
    eta: float,
    theta: float,
    kind: LossKind,
    w_bar: np.ndarray,
    constants: LossConstants,
) -> float:
    """Margin of the one-step inequality for the update ``w -> w_new`` with gravity ``g``.

    Raises :class:`SnapshotMismatchError` if ``w_new`` is not the truncated
    gradient step from ``w``.
    """
    p = float(w @ x)
    grad = float(score_gradients(kind, np.array([p]), np.array([y]))[0]) * x
    expected = truncate_gravity_dense(w - eta * grad, eta * g, theta)
    scale = 1.0 + np.abs(expected).max(initial=0.0)
    if np.abs(expected - w_new).max(initial=0.0) > 1e-9 * scale:
        raise SnapshotMismatchError("w_new is not the truncated gradient update of w")
    L = float(losses(kind, np.array([p]), np.array([y]))[0])
    Lbar = float(losses(kind, np.array([w_bar @ x]), np.array([y]))[0])
    mask = np.ones_like(w_new, dtype=bool) if math.isinf(theta) else np.abs(w_new) <= theta
    lhs = (1.0 - 0.5 * constants.A * eta) * L + g * np.abs(w_new[mask]).sum()
    rhs = (
        Lbar
        + g * np.abs(w_bar[mask]).sum()
        + 0.5 * eta * constants.B
        + (np.sum((w_bar - w) ** 2) - np.sum((w_bar - w_new) ** 2)) / (2.0 * eta)
    )
    return float(rhs - lhs)


def lemma1_margins(
    record: RunRecord,
    constants: LossConstants,
    steps: Sequence[int],
    rng: np.random.Generator,
    scale: float = 1.0,
) -> np.ndarray:
    """Lemma margins at the given 0-based steps, each against a fresh Gaussian comparator."""
    h = record.transition_gravity
    out = np.empty(len(steps))
    for k, i in enumerate(steps):
        w_bar = scale * rng.standard_normal(record.weights.shape[1])
        out[k] = check_lemma1(
            record.weights[i],
            record.X[i],
            float(record.y[i]),
            record.weights[i + 1],
            float(h[i]),
            record.eta,
            record.theta,
            record.loss,
            w_bar,
            constants,
        )
    return out


def log_prefixes(T: int, base: int = 10) -> list[int]:
    out = []
    t = 1
    while t < T:
        out.append(t)
        t *= base
    out.append(T)
    return out


# -- L1-regularized batch optimum -----------------------------------------


@dataclass(frozen=True)
class L1Objective:
    """``R(w) = mean_i L(w, z_i) + g * ||w||_1`` over a fixed dataset."""

    X: np.ndarray
    y: np.ndarray
    g: float
    loss: LossKind = LossKind.SQUARE

    def __call__(self, w: np.ndarray) -> float:
        return float(np.mean(losses(self.loss, self.X @ w, self.y)) + self.g * np.abs(w).sum())

    def smooth_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.X.T @ score_gradients(self.loss, self.X @ w, self.y) / len(self.y)


def optimality_violation(obj: L1Objective, w: np.ndarray) -> float:
    """Largest violation of the subgradient optimality condition of ``obj`` at ``w``."""
    grad = obj.smooth_gradient(w)
    nz = w != 0.0
    viol = np.where(nz, np.abs(grad + obj.g * np.sign(w)), np.maximum(0.0, np.abs(grad) - obj.g))
    return float(viol.max(initial=0.0))


def _soft(v: float, t: float) -> float:
    return math.copysign(max(abs(v) - t, 0.0), v)


def l1_optimum_oracle(
    X: np.ndarray,
    y: np.ndarray,
    g: float,
    loss: LossKind = LossKind.SQUARE,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Minimize ``mean_i L(w, z_i) + g ||w||_1``; returns ``(w*, R*)``.

    Square loss uses cyclic coordinate descent with exact coordinate
    minimization; logistic loss uses proximal gradient with backtracking.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if d > MAX_ORACLE_DIM or n > MAX_ORACLE_N:
        raise VerificationError(f"oracle limited to d <= {MAX_ORACLE_DIM}, n <= {MAX_ORACLE_N}; got d={d}, n={n}")
    loss = LossKind(loss)
    obj = L1Objective(X, y, g, loss)
    if loss is LossKind.SQUARE:
        w = _coordinate_descent(X, y, g, tol, max_iter)
    elif loss is LossKind.LOGISTIC:
        w = _proximal_gradient(obj, d, tol=1e-10, max_iter=max_iter)
    else:
        raise VerificationError("no oracle for hinge loss")
    return w, obj(w)


def _coordinate_descent(X, y, g, tol, max_iter):
    n, d = X.shape
    a = 2.0 / n * np.einsum("ij,ij->j", X, X)
    w = np.zeros(d)
    obj = L1Objective(X, y, g)
    prev = obj(w)
    for _ in range(max_iter):
        r = y - X @ w
        change = 0.0
        for j in range(d):
            if a[j] == 0.0:
                w[j] = 0.0
                continue
            rho = 2.0 / n * (X[:, j] @ r) + a[j] * w[j]
            wj = _soft(rho, g) / a[j]
            delta = wj - w[j]
            if delta != 0.0:
                r -= X[:, j] * delta
                w[j] = wj
                change = max(change, abs(delta))
        cur = obj(w)
        # objective plateau alone can stop early on flat valleys; also ask for stalled coordinates
        if prev - cur < tol and change < 1e-10:
            break
        prev = cur
    return w


def _proximal_gradient(obj: L1Objective, d: int, tol: float, max_iter: int) -> np.ndarray:
    w = np.zeros(d)
    step = 1.0
    f = obj(w)
    for _ in range(max_iter):
        grad = obj.smooth_gradient(w)
        smooth = f - obj.g * np.abs(w).sum()
        while True:
            z = w - step * grad
            w_new = np.sign(z) * np.maximum(np.abs(z) - step * obj.g, 0.0)
            diff = w_new - w
            smooth_new = obj(w_new) - obj.g * np.abs(w_new).sum()
            if smooth_new <= smooth + grad @ diff + diff @ diff / (2.0 * step) + 1e-15:
                break
            step *= 0.5
        f_new = obj(w_new)
        mapping = np.abs(diff).max(initial=0.0) / step
        w = w_new
        if f - f_new < tol and mapping < 1e-8:
            break
        f = f_new
        step *= 1.5
    return w


# -- stochastic setting ----------------------------------------------------


@dataclass(frozen=True)
class Theorem2Report:
    T: int
    seeds: int
    eta: float
    g: float
    A: float
    B: float
    C: float
    scaled_mean: float  # mean over seeds of (1 - A eta / 2) R(w_avg, g / (1 - A eta / 2))
    scaled_se: float
    path_mean: float  # mean of (1 - A eta / 2) / T * sum_t R(w_t, g / (1 - A eta / 2))
    bound: float
    objective_mean: float  # mean R(w_avg, g)
    objective_se: float
    optimum: float  # R*(g)

    @property
    def holds(self) -> bool:
        return self.scaled_mean <= self.bound + 2.0 * self.scaled_se

    @property
    def relative_gap(self) -> float:
        return (self.objective_mean - self.optimum) / self.optimum


def simulate_uniform_runs(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig,
    T: int,
    seeds: Sequence[int],
    track_objective_g: float | None = None,
) -> dict[str, np.ndarray]:
    """Dense truncated gradient with uniform sampling, one row per seed, all seeds at once.

    Implements ``w_{t+1} = T(w_t - eta * grad, g * eta)`` from ``w_1 = 0`` and
    the average of ``w_1..w_T``. Draws follow
    :func:`~truncgrad.learner.sample_indices`, so each row matches a lazy run
    with the same seed. With ``track_objective_g`` the running sum of
    ``R(w_t, track_objective_g)`` is accumulated too.
    """
    n, d = X.shape
    M = len(seeds)
    idx = np.stack([sample_indices(n, T, s) for s in seeds])
    W = np.zeros((M, d))
    S = np.zeros((M, d))
    path = np.zeros(M)
    alpha = cfg.eta * cfg.g
    for t in range(T):
        S += W
        if track_objective_g is not None:
            P = W @ X.T
            path += losses(cfg.loss, P, y).mean(axis=1) + track_objective_g * np.abs(W).sum(axis=1)
        Xi = X[idx[:, t]]
        p = np.einsum("md,md->m", W, Xi)
        coef = cfg.eta * score_gradients(cfg.loss, p, y[idx[:, t]])
        W = W - coef[:, None] * Xi
        W = np.sign(W) * np.maximum(np.abs(W) - alpha, 0.0)
    return {"average": S / T, "last": W, "path": path / T}


def check_theorem2_convergence(
    examples: Sequence[SparseExample],
    cfg: LearnerConfig,
    T: int,
    C: float | None,
    seeds: int = 20,
    dim: int | None = None,
) -> Theorem2Report:
    """Monte-Carlo check of the averaged-iterate bound in the uniform-sampling setting.

    Runs ``seeds`` independent draws (seeds ``cfg.seed .. cfg.seed + seeds - 1``),
    compares the mean scaled objective of the averaged iterate with the bound
    at the L1 optimum from :func:`l1_optimum_oracle`, and reports the gap to
    that optimum.
    """
    if C is None:
        raise VerificationError("feature bound C is required")
    if cfg.sampling is not Sampling.UNIFORM_RANDOM:
        raise VerificationError("the stochastic bound needs uniform sampling")
    if not math.isinf(cfg.theta) or cfg.K != 1 or cfg.rule is not Rule.TRUNCATED_GRADIENT:
        raise VerificationError("the stochastic bound needs theta = inf and a constant gravity (K = 1)")
    if not cfg.constant_eta:
        raise VerificationError("the stochastic bound assumes a constant learning rate")
    if seeds < 2:
        raise VerificationError("need at least two seeds for a standard error")
    examples = list(examples)
    if dim is None:
        dim = max((ex.max_index() for ex in examples), default=-1) + 1
    X, y = to_dense(examples, dim)
    if np.any(np.linalg.norm(X, axis=1) > C * (1.0 + 1e-12)):
        raise VerificationError("feature norms exceed C")
    const = assumption_constants(cfg.loss, C)
    a = 1.0 - 0.5 * const.A * cfg.eta
    if a <= 0.0:
        raise VerificationError(f"1 - A*eta/2 = {a} must be positive")
    g_scaled = cfg.g / a
    sim = simulate_uniform_runs(X, y, cfg, T, [cfg.seed + s for s in range(seeds)], track_objective_g=g_scaled)

    scaled_obj = L1Objective(X, y, g_scaled, cfg.loss)
    obj = L1Objective(X, y, cfg.g, cfg.loss)
    scaled = np.array([a * scaled_obj(w) for w in sim["average"]])
    plain = np.array([obj(w) for w in sim["average"]])
    w_star, r_star = l1_optimum_oracle(X, y, cfg.g, cfg.loss)
    bound = 0.5 * cfg.eta * const.B + w_star @ w_star / (2.0 * cfg.eta * T) + r_star
    root = math.sqrt(seeds)
    return Theorem2Report(
        T=T,
        seeds=seeds,
        eta=cfg.eta,
        g=cfg.g,
        A=const.A,
        B=const.B,
        C=C,
        scaled_mean=float(scaled.mean()),
        scaled_se=float(scaled.std(ddof=1) / root),
        path_mean=float(a * sim["path"].mean()),
        bound=float(bound),
        objective_mean=float(plain.mean()),
        objective_se=float(plain.std(ddof=1) / root),
        optimum=float(r_star),
    )


# -- reporting -------------------------------------------------------------

REPORT_COLUMNS = ("check", "comparator", "T", "lhs", "rhs", "margin", "pass")


def write_reports(path: str | Path, reports: Sequence[RegretReport]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(REPORT_COLUMNS)
        for r in reports:
            out.writerow([r.check, r.comparator, r.T, repr(r.lhs), repr(r.rhs), repr(r.margin), int(r.holds)])
