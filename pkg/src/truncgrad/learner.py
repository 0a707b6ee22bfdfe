"""Online linear learner with truncated-gradient, rounding and subgradient-L1 sparsification.

Shrinkage is applied lazily: every stored weight carries a timestamp ``tau``
(a multiple of ``K``) up to which its truncations have been applied. When a
feature shows up again, the truncation events it missed are replayed in one
go, so a step costs O(nonzeros of the example) regardless of dimension.

Within a step the order is: catch up the example's features, predict,
take the gradient step. The truncation scheduled for step ``i`` therefore
happens before the prediction at step ``i``.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .data import SparseExample, format_number, substream
from .loss import LossKind, loss_functions
from .truncation import INF, gravity_schedule, truncate_gravity, truncate_round


class Rule(str, Enum):
    TRUNCATED_GRADIENT = "truncated_gradient"
    ROUNDING = "rounding"
    SUBGRADIENT_L1 = "subgradient_l1"


RULE_ALIASES = {
    "tg": Rule.TRUNCATED_GRADIENT,
    "truncated": Rule.TRUNCATED_GRADIENT,
    "round": Rule.ROUNDING,
    "subgradient": Rule.SUBGRADIENT_L1,
    "l1": Rule.SUBGRADIENT_L1,
}


def parse_rule(name: str | Rule) -> Rule:
    if isinstance(name, Rule):
        return name
    return RULE_ALIASES.get(name) or Rule(name)


class Sampling(str, Enum):
    SEQUENTIAL = "sequential"
    UNIFORM_RANDOM = "uniform_random"


class ConfigError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, detail: str = "non-finite update"):
        self.step = step
        super().__init__(f"diverged at step {step}: {detail}")


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters of one training run.

    ``lr_decay_power`` gives the per-step rate ``eta * i**-power``;
    ``pass_lr_decay`` multiplies the rate once per pass. ``steps`` is the
    number of draws for uniform sampling (default ``passes * n``).
    ``final_threshold`` rounds the model once after training, which is how
    the subgradient baseline is made sparse. ``average`` keeps the running
    mean of the prediction weights at O(stored weights) cost per step.
    """

    eta: float = 0.1
    g: float = 0.0
    theta: float = INF
    K: int = 1
    rule: Rule = Rule.TRUNCATED_GRADIENT
    loss: LossKind = LossKind.SQUARE
    passes: int = 1
    lr_decay_power: float = 0.0
    pass_lr_decay: float = 1.0
    sampling: Sampling = Sampling.SEQUENTIAL
    steps: int | None = None
    vw_normalize: bool = False
    vw_clip: bool = False
    seed: int = 0
    average: bool = False
    final_threshold: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "rule", parse_rule(self.rule))
            object.__setattr__(self, "loss", LossKind(self.loss))
            object.__setattr__(self, "sampling", Sampling(self.sampling))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("eta", "g", "theta", "lr_decay_power", "pass_lr_decay", "final_threshold"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must be in (0, 1], got {self.eta}")
        if not (self.g >= 0.0 and math.isfinite(self.g)):
            raise ConfigError(f"g must be finite and >= 0, got {self.g}")
        if not self.theta >= 0.0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if self.rule is Rule.ROUNDING and math.isinf(self.theta):
            raise ConfigError("the rounding rule needs a finite theta")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        if int(self.passes) != self.passes or self.passes < 1:
            raise ConfigError(f"passes must be a positive integer, got {self.passes}")
        if not 0.0 <= self.lr_decay_power <= 1.0:
            raise ConfigError("lr_decay_power must be in [0, 1]")
        if not 0.0 < self.pass_lr_decay <= 1.0:
            raise ConfigError("pass_lr_decay must be in (0, 1]")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.final_threshold < 0.0 or math.isinf(self.final_threshold):
            raise ConfigError("final_threshold must be finite and >= 0")

    @property
    def constant_eta(self) -> bool:
        return self.lr_decay_power == 0.0 and self.pass_lr_decay == 1.0

    def replace(self, **changes) -> "LearnerConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return LearnerConfig(**values)

    def as_dict(self) -> dict[str, object]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out


def step_eta(cfg: LearnerConfig, i: int, pass_index: int) -> float:
    """Learning rate used at step ``i`` (1-based) during pass ``pass_index``."""
    eta = cfg.eta
    if cfg.pass_lr_decay != 1.0 and pass_index:
        eta *= cfg.pass_lr_decay**pass_index
    if cfg.lr_decay_power != 0.0:
        eta *= i ** (-cfg.lr_decay_power)
    return eta


def sample_indices(n: int, T: int, seed: int) -> np.ndarray:
    """Example indices for ``T`` uniform draws with replacement."""
    return substream(seed, "sampling").integers(0, n, size=T)


class WeightState:
    """Sparse weight map ``feature -> (weight, tau)`` that never stores zeros.

    ``ops`` counts map accesses made through :meth:`get`, :meth:`put` and
    :meth:`discard`.
    """

    __slots__ = ("_entries", "step", "ops")

    def __init__(self):
        self._entries: dict[int, tuple[float, int]] = {}
        self.step = 0
        self.ops = 0

    def get(self, j: int) -> tuple[float, int] | None:
        self.ops += 1
        return self._entries.get(j)

    def put(self, j: int, weight: float, tau: int) -> None:
        self.ops += 1
        self._entries[j] = (weight, tau)

    def discard(self, j: int) -> None:
        self.ops += 1
        self._entries.pop(j, None)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, j: int) -> bool:
        return j in self._entries

    def items(self) -> Iterator[tuple[int, tuple[float, int]]]:
        return iter(self._entries.items())

    def weights(self) -> dict[int, float]:
        """Stored weights sorted by feature index (pending shrinkage not applied)."""
        return {j: self._entries[j][0] for j in sorted(self._entries)}


@dataclass
class RunTrace:
    """Per-step record of a run.

    ``truncated_mass`` is the L1 mass removed by truncation during the step;
    in lazy runs it is booked when a feature catches up, not when the
    truncation was scheduled.
    """

    step: list[int] = field(default_factory=list)
    example: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    eta: list[float] = field(default_factory=list)
    gravity: list[float] = field(default_factory=list)
    nnz: list[int] = field(default_factory=list)
    truncated_mass: list[float] = field(default_factory=list)

    COLUMNS = ("step", "example", "loss", "eta", "gravity", "nnz", "truncated_mass")

    def append(self, step, example, loss, eta, gravity, nnz, truncated_mass) -> None:
        self.step.append(step)
        self.example.append(example)
        self.loss.append(loss)
        self.eta.append(eta)
        self.gravity.append(gravity)
        self.nnz.append(nnz)
        self.truncated_mass.append(truncated_mass)

    def __len__(self) -> int:
        return len(self.step)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(self.COLUMNS)
            for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
                out.writerow([format_number(v) if isinstance(v, float) else v for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(cls.COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"trace file lacks columns {sorted(missing)}")
            for row in reader:
                trace.append(
                    int(row["step"]),
                    int(row["example"]),
                    float(row["loss"]),
                    float(row["eta"]),
                    float(row["gravity"]),
                    int(row["nnz"]),
                    float(row["truncated_mass"]),
                )
        return trace


def _sgn_shrink(w: float, alpha: float, n: int) -> float:
    """Apply ``w <- w - alpha * sgn(w)`` ``n`` times.

    Near zero the iterates fall into a two-cycle; once a value repeats two
    steps later the remaining parity decides the result.
    """
    prev = None
    k = 0
    while k < n:
        if w == 0.0:
            return 0.0
        nxt = w - alpha if w > 0.0 else w + alpha
        k += 1
        if prev is not None and nxt == prev:
            # cycle (prev, w): after k steps we sit at prev; alternate from here
            return nxt if (n - k) % 2 == 0 else w
        prev, w = w, nxt
    return w


def lazy_catch_up(
    weight: float,
    tau: int,
    i: int,
    cfg: LearnerConfig,
    amounts: Sequence[float] | None = None,
) -> tuple[float, int]:
    """Replay the ``floor((i - tau) / K)`` truncation events a weight missed.

    Returns the new ``(weight, tau)`` with ``tau`` advanced by
    ``floor((i - tau) / K) * K``. ``amounts`` lists the shrinkage of each
    missed event when the learning rate is not constant; otherwise every
    event shrinks by ``K * eta * g``. With a finite ``theta`` events are
    applied one at a time, which is what a dense run does.
    """
    K = cfg.K
    n = (i - tau) // K
    if n <= 0:
        return weight, tau
    new_tau = tau + n * K
    rule = cfg.rule
    theta = cfg.theta
    if rule is Rule.ROUNDING:
        return truncate_round(weight, theta), new_tau
    if amounts is None:
        alpha = cfg.eta * gravity_schedule(K, K, cfg.g)
        if alpha == 0.0:
            return weight, new_tau
        if rule is Rule.SUBGRADIENT_L1:
            return _sgn_shrink(weight, alpha, n), new_tau
        if math.isinf(theta):
            return truncate_gravity(weight, n * alpha, theta), new_tau
        amounts = (alpha,) * n
    elif len(amounts) != n:
        raise ValueError(f"expected {n} shrink amounts, got {len(amounts)}")
    w = weight
    if rule is Rule.SUBGRADIENT_L1:
        for a in amounts:
            if w == 0.0:
                break
            w = w - a if w > 0.0 else w + a
        return w, new_tau
    if math.isinf(theta):
        return truncate_gravity(w, math.fsum(amounts), theta), new_tau
    for a in amounts:
        if w == 0.0 or abs(w) > theta:
            break
        w = truncate_gravity(w, a, theta)
    return w, new_tau


def predict(w: WeightState | dict[int, float], x: SparseExample, cfg: LearnerConfig | None = None) -> float:
    """Score ``sum_j w_j x_j`` using stored weights as they are.

    Lazy shrinkage must already be applied for the features of ``x``
    (:meth:`SparseLearner.step` does this before predicting).
    """
    lookup = w.weights() if isinstance(w, WeightState) else w
    raw = 0.0
    for j, v in x.features:
        wj = lookup.get(j)
        if wj is not None:
            raw += wj * v
    return link(raw, x.nnz, cfg)


def link(raw: float, k: int, cfg: LearnerConfig | None) -> float:
    """Apply the optional normalization by ``sqrt(k)`` and clipping to ``[0, 1]``."""
    if cfg is None:
        return raw
    p = raw
    if cfg.vw_normalize and k:
        p = raw / math.sqrt(k)
    if cfg.vw_clip:
        p = min(1.0, max(0.0, p))
    return p


def training_target(y: float, cfg: LearnerConfig) -> float:
    # clipped predictions live in [0, 1], so +-1 labels map onto {0, 1}
    if cfg.vw_clip and cfg.loss is LossKind.SQUARE:
        return (y + 1.0) / 2.0
    return y


class SparseLearner:
    """Lazy online learner; feed it examples with :meth:`step`, then call :meth:`finish`."""

    def __init__(self, cfg: LearnerConfig):
        self.cfg = cfg
        self.state = WeightState()
        self.trace = RunTrace()
        self.peak_nnz = 0
        self.pass_index = 0
        self._value, self._grad = loss_functions(cfg.loss)
        self._classification = cfg.loss.is_classification
        self._constant = cfg.constant_eta
        # event log for non-constant rates: alphas[m - 1] is the shrink at step m * K
        self._alphas: list[float] = []
        self._cum: list[float] = [0.0]
        self._avg_sum: dict[int, float] | None = {} if cfg.average else None
        self._finished = False

    def _catch_up(self, w: float, tau: int, boundary: int) -> float:
        cfg = self.cfg
        if self._constant or cfg.rule is Rule.ROUNDING:
            return lazy_catch_up(w, tau, boundary, cfg)[0]
        K = cfg.K
        lo, hi = tau // K, boundary // K
        if cfg.rule is Rule.TRUNCATED_GRADIENT and math.isinf(cfg.theta):
            return truncate_gravity(w, self._cum[hi] - self._cum[lo], INF)
        return lazy_catch_up(w, tau, boundary, cfg, self._alphas[lo:hi])[0]

    def step(self, ex: SparseExample, example_index: int = -1) -> float:
        """Process one labeled example; returns the loss of the prediction."""
        if self._finished:
            raise RuntimeError("learner already finished")
        cfg = self.cfg
        K = cfg.K
        state = self.state
        i = state.step + 1
        y = ex.label
        if y is None:
            raise ValueError(f"step {i}: example has no label")
        if self._classification and y != 1.0 and y != -1.0:
            raise ValueError(f"step {i}: label {y!r} is not -1 or +1")
        eta = cfg.eta if self._constant else step_eta(cfg, i, self.pass_index)
        g_i = gravity_schedule(i, K, cfg.g)
        if not self._constant and i % K == 0:
            a = eta * g_i
            self._alphas.append(a)
            self._cum.append(self._cum[-1] + a)
        boundary = i - i % K

        feats = ex.features
        ws = []
        raw = 0.0
        removed = 0.0
        for j, xj in feats:
            entry = state.get(j)
            if entry is None:
                w = 0.0
            else:
                w, tau = entry
                if tau < boundary:
                    w2 = self._catch_up(w, tau, boundary)
                    removed += abs(w - w2)
                    w = w2
            ws.append(w)
            raw += w * xj

        if self._avg_sum is not None:
            self._accumulate_average(feats, ws, boundary)

        k = len(feats)
        p = link(raw, k, cfg)
        target = training_target(y, cfg)
        loss = self._value(p, target)
        d = self._grad(p, target)
        if cfg.vw_normalize and k:
            d /= math.sqrt(k)
        coef = eta * d
        if not (math.isfinite(coef) and math.isfinite(loss)):
            raise DivergenceError(i)
        for (j, xj), w in zip(feats, ws):
            w_new = w - coef * xj
            if w_new == 0.0:
                state.discard(j)
            else:
                state.put(j, w_new, boundary)

        state.step = i
        nnz = len(state)
        if nnz > self.peak_nnz:
            self.peak_nnz = nnz
        self.trace.append(i, example_index, loss, eta, g_i, nnz, removed)
        return loss

    def _accumulate_average(self, feats, ws, boundary: int) -> None:
        acc = self._avg_sum
        touched = {j for j, _ in feats}
        for j, (w, tau) in self.state.items():
            if j in touched:
                continue
            if tau < boundary:
                w = self._catch_up(w, tau, boundary)
            if w != 0.0:
                acc[j] = acc.get(j, 0.0) + w
        for (j, _), w in zip(feats, ws):
            if w != 0.0:
                acc[j] = acc.get(j, 0.0) + w

    def materialize(self) -> dict[int, float]:
        """Current weights with all pending shrinkage applied, without touching the state."""
        i = self.state.step
        boundary = i - i % self.cfg.K
        out = {}
        for j, (w, tau) in self.state.items():
            if tau < boundary:
                w = self._catch_up(w, tau, boundary)
            if w != 0.0:
                out[j] = w
        return dict(sorted(out.items()))

    def finish(self) -> None:
        """Apply all pending shrinkage (and the optional final rounding) to the stored weights."""
        if self._finished:
            return
        i = self.state.step
        boundary = i - i % self.cfg.K
        entries = self.state._entries
        for j in list(entries):
            w, tau = entries[j]
            if tau < boundary:
                w = self._catch_up(w, tau, boundary)
            if self.cfg.final_threshold > 0.0:
                w = truncate_round(w, self.cfg.final_threshold)
            if w == 0.0:
                del entries[j]
            else:
                entries[j] = (w, max(tau, boundary))
        self._finished = True

    def averaged(self) -> dict[int, float] | None:
        if self._avg_sum is None:
            return None
        T = self.state.step
        return {j: s / T for j, s in sorted(self._avg_sum.items()) if s != 0.0}


@dataclass
class TrainResult:
    state: WeightState
    trace: RunTrace
    averaged: dict[int, float] | None = None
    peak_nnz: int = 0

    @property
    def weights(self) -> dict[int, float]:
        return self.state.weights()

    @property
    def steps(self) -> int:
        return self.state.step


def _is_one_shot(stream) -> bool:
    return iter(stream) is stream


def drive(learner, stream: Iterable[SparseExample], cfg: LearnerConfig) -> int:
    """Feed ``stream`` to ``learner`` according to the config's passes and sampling.

    Works for :class:`SparseLearner` and the dense reference alike.
    Returns the number of steps taken.
    """
    steps = 0
    if cfg.sampling is Sampling.SEQUENTIAL:
        data = list(stream) if cfg.passes > 1 and _is_one_shot(stream) else stream
        for p in range(cfg.passes):
            learner.pass_index = p
            for idx, ex in enumerate(data):
                learner.step(ex, idx)
                steps += 1
    else:
        data = stream if isinstance(stream, Sequence) else list(stream)
        n = len(data)
        if n == 0:
            raise ValueError("empty example stream")
        T = cfg.steps if cfg.steps is not None else cfg.passes * n
        for t, idx in enumerate(sample_indices(n, T, cfg.seed).tolist()):
            learner.pass_index = t // n
            learner.step(data[idx], idx)
            steps += 1
    if steps == 0:
        raise ValueError("empty example stream")
    return steps


def train(stream: Iterable[SparseExample], cfg: LearnerConfig) -> TrainResult:
    """Run the lazy learner over ``stream`` and return final weights, average and trace."""
    learner = SparseLearner(cfg)
    drive(learner, stream, cfg)
    averaged = learner.averaged()
    learner.finish()
    return TrainResult(learner.state, learner.trace, averaged, learner.peak_nnz)


# -- model files -----------------------------------------------------------

MODEL_HEADER = ("rule", "eta", "g", "theta", "K", "loss", "vw_normalize", "vw_clip")


def dump_model(weights: dict[int, float], cfg: LearnerConfig) -> str:
    lines = []
    for key in MODEL_HEADER:
        v = getattr(cfg, key)
        if isinstance(v, Enum):
            v = v.value
        elif isinstance(v, bool):
            v = int(v)
        elif isinstance(v, float):
            v = format_number(v)
        lines.append(f"{key}={v}")
    for j in sorted(weights):
        if weights[j] != 0.0:
            lines.append(f"{j}:{format_number(weights[j])}")
    return "\n".join(lines) + "\n"


def write_model(path: str | Path, weights: dict[int, float], cfg: LearnerConfig) -> None:
    Path(path).write_text(dump_model(weights, cfg), encoding="utf-8")


def read_model(path: str | Path) -> tuple[LearnerConfig, dict[int, float]]:
    header: dict[str, str] = {}
    weights: dict[int, float] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            header[key] = value
        elif ":" in line:
            j, _, v = line.partition(":")
            weights[int(j)] = float(v)
        else:
            raise ValueError(f"{path}:{n}: unrecognized model line {line!r}")
    missing = [k for k in MODEL_HEADER[:6] if k not in header]
    if missing:
        raise ValueError(f"{path}: model header lacks {missing}")
    cfg = LearnerConfig(
        rule=header["rule"],
        eta=float(header["eta"]),
        g=float(header["g"]),
        theta=float(header["theta"]),
        K=int(header["K"]),
        loss=header["loss"],
        vw_normalize=header.get("vw_normalize", "0") == "1",
        vw_clip=header.get("vw_clip", "0") == "1",
    )
    return cfg, weights
