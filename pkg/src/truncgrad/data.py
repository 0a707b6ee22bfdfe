"""Sparse labeled examples: svmlight-style parsing, synthetic data and noise features."""

from __future__ import annotations

import gzip
import math
import zlib
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_INDEX = 2**63 - 1


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class SparseExample:
    """A label and its nonzero features as ``(index, value)`` pairs sorted by index.

    ``label`` is ``None`` for unlabeled examples (prediction input only).
    """

    label: float | None
    features: tuple[tuple[int, float], ...] = ()

    @property
    def nnz(self) -> int:
        return len(self.features)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for _, v in self.features))

    def max_index(self) -> int:
        return self.features[-1][0] if self.features else -1


@dataclass(frozen=True)
class DatasetMeta:
    n_examples: int
    max_feature_index: int
    C: float
    task: str  # "classification" or "regression"


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from ``seed`` and a stream ``name``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# -- parsing ---------------------------------------------------------------

LABEL_MODES = ("raw", "pm1", "01")


def _map_label(raw: float, label_mode: str) -> float:
    if label_mode == "raw":
        return raw
    if label_mode == "pm1":
        if raw not in (1.0, -1.0):
            raise ValueError(f"label {raw!r} is not -1 or +1")
        return raw
    if label_mode == "01":
        if raw == 1.0:
            return 1.0
        if raw == 0.0:
            return -1.0
        raise ValueError(f"label {raw!r} is not 0 or 1")
    raise ValueError(f"unknown label mode {label_mode!r}")


def _parse_float(tok: str, what: str, lineno: int | None) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"malformed {what} {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {tok!r}", lineno)
    return v


def parse_line(
    line: str,
    lineno: int | None = None,
    *,
    label_mode: str = "raw",
    allow_unlabeled: bool = False,
) -> SparseExample:
    """Parse ``<label> <idx>:<val> ...`` into a :class:`SparseExample`.

    Text after ``#`` is ignored. Zero values are dropped. Indices must be
    strictly increasing.
    """
    body = line.split("#", 1)[0]
    tokens = body.split()
    if not tokens:
        raise ParseError("empty example", lineno)
    label = None
    if ":" in tokens[0]:
        if not allow_unlabeled:
            raise ParseError(f"missing label before {tokens[0]!r}", lineno)
    else:
        raw = _parse_float(tokens[0], "label", lineno)
        try:
            label = _map_label(raw, label_mode)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        tokens = tokens[1:]

    feats = []
    last = -1
    for tok in tokens:
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise ParseError(f"malformed feature token {tok!r}", lineno)
        try:
            idx = int(idx_s)
        except ValueError:
            raise ParseError(f"malformed feature index in {tok!r}", lineno) from None
        if idx < 0 or idx > MAX_INDEX:
            raise ParseError(f"feature index {idx} out of range", lineno)
        if idx == last:
            raise ParseError(f"duplicate index {idx}", lineno)
        if idx < last:
            raise ParseError(f"non-increasing index {idx} after {last}", lineno)
        last = idx
        val = _parse_float(val_s, "feature value", lineno)
        if val != 0.0:
            feats.append((idx, val))
    return SparseExample(label, tuple(feats))


def format_number(v: float) -> str:
    """Shortest text that parses back to ``v``; integral values print without a point."""
    if float(v).is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def format_example(ex: SparseExample) -> str:
    parts = [] if ex.label is None else [format_number(ex.label)]
    parts.extend(f"{j}:{format_number(v)}" for j, v in ex.features)
    return " ".join(parts)


def _open_text(path: str | Path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


class SvmlightFile:
    """Re-iterable, line-at-a-time reader over an svmlight text file (plain or gzip)."""

    def __init__(self, path: str | Path, label_mode: str = "raw", allow_unlabeled: bool = False):
        self.path = Path(path)
        self.label_mode = label_mode
        self.allow_unlabeled = allow_unlabeled

    def __iter__(self) -> Iterator[SparseExample]:
        with _open_text(self.path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.split("#", 1)[0].strip():
                    continue
                yield parse_line(
                    line, lineno, label_mode=self.label_mode, allow_unlabeled=self.allow_unlabeled
                )


def read_examples(path: str | Path, label_mode: str = "raw", allow_unlabeled: bool = False) -> list[SparseExample]:
    return list(SvmlightFile(path, label_mode, allow_unlabeled))


def write_examples(path: str | Path, examples: Iterable[SparseExample]) -> None:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(format_example(ex) + "\n")


def scan_meta(examples: Iterable[SparseExample], task: str | None = None) -> DatasetMeta:
    """One pass over ``examples`` collecting size, max index and the norm bound ``C``."""
    n = 0
    max_index = -1
    c2 = 0.0
    binary = True
    for ex in examples:
        n += 1
        if ex.features:
            max_index = max(max_index, ex.features[-1][0])
        c2 = max(c2, sum(v * v for _, v in ex.features))
        if ex.label not in (1.0, -1.0):
            binary = False
    C = math.sqrt(c2)
    # sqrt can round down; keep C a true upper bound on every norm
    if C * C < c2:
        C = math.nextafter(C, math.inf)
    if task is None:
        task = "classification" if binary else "regression"
    return DatasetMeta(n_examples=n, max_feature_index=max_index, C=C, task=task)


# -- generators ------------------------------------------------------------


def augment_random_features(
    examples: Iterable[SparseExample],
    count: int,
    p: float,
    seed: int,
    offset: int | None = None,
) -> Iterator[SparseExample]:
    """Append ``count`` binary features, each independently 1 with probability ``p``.

    New indices are ``offset, ..., offset + count - 1``; by default ``offset``
    is one past the largest index in ``examples`` (which must then be a
    sequence so it can be scanned first).
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if count == 0:
        yield from examples
        return
    if offset is None:
        if not isinstance(examples, Sequence):
            raise TypeError("offset is required when examples is a one-shot stream")
        offset = max((ex.max_index() for ex in examples), default=-1) + 1
    rng = substream(seed, "augment")
    for ex in examples:
        if ex.features and ex.features[-1][0] >= offset:
            raise ValueError(f"example has index {ex.features[-1][0]} >= offset {offset}")
        hits = np.flatnonzero(rng.random(count) < p)
        added = tuple((offset + int(k), 1.0) for k in hits)
        yield SparseExample(ex.label, ex.features + added)


@dataclass
class SyntheticDataset:
    examples: list[SparseExample]
    meta: DatasetMeta
    true_weights: dict[int, float] = field(default_factory=dict)
    noise_offset: int = 0


def generate_synthetic(
    n: int,
    d_informative: int,
    d_noise: int,
    noise_p: float,
    label_noise: float,
    seed: int,
    margin: float = 0.0,
    scale: float = 1.0,
) -> SyntheticDataset:
    """Binary classification data with a hidden linear rule plus random binary noise features.

    Informative features sit at indices ``1..d_informative`` with standard
    normal values; the label is ``sign(w* . x)`` flipped with probability
    ``label_noise``. Examples whose normalized margin ``|w* . x| / ||w*||``
    is below ``margin`` are redrawn, then informative values are multiplied
    by ``scale``. Noise features follow :func:`augment_random_features`.
    """
    if n <= 0 or d_informative <= 0:
        raise ValueError("n and d_informative must be positive")
    if d_noise < 0:
        raise ValueError("d_noise must be non-negative")
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError("label_noise must be in [0, 1]")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = substream(seed, "synthetic")
    w_true = rng.standard_normal(d_informative)
    w_norm = float(np.linalg.norm(w_true))

    rows: list[np.ndarray] = []
    have = 0
    while have < n:
        block = rng.standard_normal((max(n - have, 16) * 2, d_informative))
        if margin > 0:
            block = block[np.abs(block @ w_true) / w_norm >= margin]
        rows.append(block)
        have += len(block)
    X = np.concatenate(rows)[:n] * scale
    labels = np.where(X @ w_true >= 0, 1.0, -1.0)
    flips = rng.random(n) < label_noise
    labels[flips] *= -1.0

    base = [
        SparseExample(float(labels[r]), tuple((j + 1, float(X[r, j])) for j in range(d_informative) if X[r, j] != 0.0))
        for r in range(n)
    ]
    offset = d_informative + 1
    examples = list(augment_random_features(base, d_noise, noise_p, seed, offset=offset))
    meta = scan_meta(examples, task="classification")
    truth = {j + 1: float(w_true[j]) for j in range(d_informative)}
    return SyntheticDataset(examples, meta, truth, offset)


def generate_regression(n: int, d: int, seed: int, noise: float = 0.1, density: float = 1.0, sparsity: int | None = None) -> SyntheticDataset:
    """Small regression problem ``y = w* . x + noise`` on features ``0..d-1``."""
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    rng = substream(seed, "regression")
    w_true = rng.standard_normal(d)
    if sparsity is not None:
        w_true[rng.permutation(d)[sparsity:]] = 0.0
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < density)
    y = X @ w_true + noise * rng.standard_normal(n)
    examples = [
        SparseExample(float(y[r]), tuple((j, float(X[r, j])) for j in range(d) if X[r, j] != 0.0))
        for r in range(n)
    ]
    truth = {j: float(w_true[j]) for j in range(d) if w_true[j] != 0.0}
    return SyntheticDataset(examples, scan_meta(examples, task="regression"), truth, d)


def train_test_split(examples: Sequence[SparseExample], test_fraction: float, seed: int) -> tuple[list[SparseExample], list[SparseExample]]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    order = substream(seed, "split").permutation(len(examples))
    n_test = max(1, int(round(test_fraction * len(examples))))
    test = [examples[k] for k in sorted(order[:n_test])]
    train = [examples[k] for k in sorted(order[n_test:])]
    return train, test


def to_dense(examples: Sequence[SparseExample], dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(X, y)`` arrays; intended for small test and oracle problems."""
    X = np.zeros((len(examples), dim))
    y = np.zeros(len(examples))
    for r, ex in enumerate(examples):
        for j, v in ex.features:
            X[r, j] = v
        y[r] = ex.label if ex.label is not None else np.nan
    return X, y
