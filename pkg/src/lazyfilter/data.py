"""Datasets, warm-up split, participant partitioning and label corruption."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from lazyfilter.errors import InvalidInput
from lazyfilter.model import LabeledExample
from lazyfilter.rng import substream

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, integer labels and a stable id per example.

    ``ids`` survive every split and relabelling, which is what the
    disjointness checks key on.
    """

    X: np.ndarray
    y: np.ndarray
    class_count: int
    name: str = "dataset"
    ids: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise InvalidInput(f"X shape {X.shape} does not match y shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise InvalidInput("labels must lie in [0, class_count)")
        ids = np.arange(len(y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise InvalidInput("ids must have one entry per example")
        for arr in (X, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[LabeledExample]:
        for x, label in zip(self.X, self.y):
            yield LabeledExample(x, int(label))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.X[index], self.y[index], self.class_count, name or self.name, self.ids[index])

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y, self.class_count, self.name, self.ids)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.class_count)

    @classmethod
    def from_examples(cls, examples, class_count: int, name: str = "dataset") -> "Dataset":
        examples = list(examples)
        if not examples:
            raise InvalidInput("no examples")
        X = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        return cls(X, [e.label for e in examples], class_count, name)

    @classmethod
    def concat(cls, parts, name: str = "dataset") -> "Dataset":
        parts = list(parts)
        if not parts:
            raise InvalidInput("nothing to concatenate")
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            parts[0].class_count,
            name,
            np.concatenate([p.ids for p in parts]),
        )


@dataclass(frozen=True)
class PartitionConfig:
    participant_count: int = 100
    train_batch_size: int = 100
    test_set_size: int = 50
    dirichlet_alpha: float | None = None  # None means IID
    warmup_fraction: float = 0.01
    # "mixture": test sets follow the participant's Dirichlet mixture; "iid": uniform draws
    test_distribution: str = "mixture"

    def __post_init__(self):
        if self.test_distribution not in ("mixture", "iid"):
            raise InvalidInput("test_distribution must be 'mixture' or 'iid'")
        if self.participant_count < 2:
            raise InvalidInput("need at least 2 participants")
        if self.train_batch_size < 1 or self.test_set_size < 1:
            raise InvalidInput("batch and test sizes must be positive")
        if self.dirichlet_alpha is not None and not self.dirichlet_alpha > 0:
            raise InvalidInput("dirichlet_alpha must be positive (or None for IID)")
        if not 0 < self.warmup_fraction < 1:
            raise InvalidInput("warmup_fraction must lie in (0, 1)")

    @property
    def iid(self) -> bool:
        return self.dirichlet_alpha is None

    @property
    def points_needed(self) -> int:
        return self.participant_count * (self.train_batch_size + self.test_set_size)


@dataclass(frozen=True)
class CorruptionConfig:
    corrupt_participant_fraction: float = 0.3
    corrupt_point_fraction: float = 0.9

    def __post_init__(self):
        for v in (self.corrupt_participant_fraction, self.corrupt_point_fraction):
            if not 0 <= v <= 1:
                raise InvalidInput("corruption fractions must lie in [0, 1]")


@dataclass(frozen=True)
class ParticipantRecord:
    id: int
    train_batch: Dataset
    test_set: Dataset
    # ground truth for scoring only; protocol code must not read it
    is_corrupted: bool = field(default=False, repr=False)
    privacy_p: float = 0.0


@dataclass
class PartitionReport:
    mode: str
    alpha: float | None
    fallbacks: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def apportion(weights, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` by the largest-remainder rule."""
    w = np.asarray(weights, dtype=np.float64)
    if total == 0:
        return np.zeros(len(w), dtype=np.int64)
    if w.sum() <= 0:
        raise InvalidInput("weights must have positive mass")
    exact = w / w.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def make_synthetic(class_count: int, dim: int, per_class: int, separation: float, seed: int,
                   name: str = "synthetic") -> Dataset:
    """Unit-variance Gaussian blobs whose nearest means are ``separation`` apart."""
    if class_count < 2 or per_class < 1 or dim < 1 or not separation > 0:
        raise InvalidInput("invalid synthetic dataset parameters")
    rng = substream(seed, "data")
    if dim >= class_count:
        # orthogonal means: every pair exactly `separation` apart
        means = np.zeros((class_count, dim))
        means[np.arange(class_count), np.arange(class_count)] = separation / np.sqrt(2.0)
    else:
        means = rng.normal(size=(class_count, dim))
        gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
        gaps[np.diag_indices(class_count)] = np.inf
        means *= separation / gaps.min()
    # centre the blobs on the origin; pairwise gaps are translation invariant
    means -= means.mean(axis=0)
    y = np.repeat(np.arange(class_count), per_class)
    X = means[y] + rng.normal(size=(len(y), dim))
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order], class_count, name)


def desk_dataset(cfg: PartitionConfig, seed: int, class_count: int = 10, dim: int = 20,
                 separation: float = 6.0, headroom: float = 1.2, extra_fraction: float = 0.0) -> Dataset:
    """Synthetic stand-in sized so the pool covers ``cfg`` with some headroom.

    ``extra_fraction`` reserves that share of the total for a later holdout
    split. Headroom keeps Dirichlet draws from exhausting classes too early.
    """
    needed = cfg.points_needed * headroom / (1.0 - cfg.warmup_fraction) / (1.0 - extra_fraction)
    per_class = int(np.ceil(needed / class_count))
    return make_synthetic(class_count, dim, per_class, separation, seed, name=f"synthetic-d{dim}")


def load_csv(path, class_count: int | None = None, name: str | None = None) -> Dataset:
    """Read ``label,f0,f1,...`` rows; a leading header row is optional."""
    rows = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row:
                continue
            if i == 0 and row[0].strip().lower() == "label":
                continue
            rows.append(row)
    if not rows:
        raise InvalidInput(f"{path}: no examples")
    try:
        y = np.array([int(r[0]) for r in rows])
        X = np.array([[float(v) for v in r[1:]] for r in rows])
    except ValueError as e:
        raise InvalidInput(f"{path}: malformed row ({e})") from None
    if class_count is None:
        class_count = int(y.max()) + 1
    return Dataset(X, y, class_count, name or Path(path).stem)


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [f"f{j}" for j in range(data.dim)])
        for x, label in zip(data.X, data.y):
            w.writerow([int(label)] + [repr(float(v)) for v in x])


def stratified_split(data: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Split off ``round(fraction * n)`` points with per-class counts
    apportioned to class frequencies."""
    n = len(data)
    k = round_half_up(fraction * n)
    counts = data.class_counts()
    take = apportion(counts, k)
    picked = []
    for c in range(data.class_count):
        idx = np.flatnonzero(data.y == c)
        picked.append(rng.permutation(idx)[: take[c]])
    chosen = np.sort(np.concatenate(picked))
    rest = np.setdiff1d(np.arange(n), chosen)
    return data.subset(chosen), data.subset(rest)


def split_warmup(data: Dataset, cfg: PartitionConfig, seed: int) -> tuple[Dataset, Dataset]:
    warmup, pool = stratified_split(data, cfg.warmup_fraction, substream(seed, "warmup_split"))
    if len(pool) < cfg.points_needed:
        raise InvalidInput(
            f"pool of {len(pool)} points after warm-up cannot supply "
            f"{cfg.participant_count} x ({cfg.train_batch_size}+{cfg.test_set_size})"
        )
    return replace_name(warmup, f"{data.name}/warmup"), replace_name(pool, f"{data.name}/pool")


def replace_name(data: Dataset, name: str) -> Dataset:
    return Dataset(data.X, data.y, data.class_count, name, data.ids)


def sample_dirichlet(alpha: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet draw that stays valid for tiny ``alpha``.

    Gamma variates underflow to 0 for alpha << 1; when every component
    does, the limit is a vertex of the simplex, chosen uniformly.
    """
    g = rng.gamma(alpha, size=size)
    s = g.sum()
    if s > 0 and np.isfinite(s):
        return g / s
    q = np.zeros(size)
    q[rng.integers(size)] = 1.0
    return q


class _ClassPools:
    def __init__(self, labels: np.ndarray, class_count: int, rng: np.random.Generator):
        self.queues = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(class_count)]

    def available(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues])

    def take(self, c: int, k: int) -> list:
        out, self.queues[c] = self.queues[c][:k], self.queues[c][k:]
        return out

    def draw(self, mixture: np.ndarray, total: int, owner: int, role: str, report: PartitionReport) -> list:
        wanted = apportion(mixture, total)
        got = []
        for c in np.flatnonzero(wanted):
            got += self.take(c, wanted[c])
        short = total - len(got)
        while short > 0:
            avail = self.available()
            if avail.sum() == 0:
                raise InvalidInput("pool exhausted during partitioning")
            w = mixture * (avail > 0)
            if w.sum() == 0:
                w = avail.astype(np.float64)
            extra = np.minimum(apportion(w, short), avail)
            if extra.sum() == 0:
                extra[np.argmax(avail)] = 1
            for c in np.flatnonzero(extra):
                got += self.take(c, extra[c])
            report.fallbacks.append({"participant": owner, "set": role, "refilled": int(short)})
            short = total - len(got)
        return got


def dirichlet_partition(pool: Dataset, cfg: PartitionConfig, seed: int) -> tuple[list[ParticipantRecord], PartitionReport]:
    """Give each participant a train batch and a test set, without replacement.

    In non-IID mode participant ``i`` draws a class mixture from a symmetric
    Dirichlet(alpha) and both of its sets follow that mixture. Counts per
    class are apportioned deterministically from the mixture; when a class
    runs dry the shortfall is refilled from the classes that remain and the
    event is logged in the returned report.
    """
    if len(pool) < cfg.points_needed:
        raise InvalidInput(f"pool has {len(pool)} points, partition needs {cfg.points_needed}")
    rng = substream(seed, "partition")
    report = PartitionReport("iid" if cfg.iid else "dirichlet", cfg.dirichlet_alpha)
    n_tr, n_te = cfg.train_batch_size, cfg.test_set_size
    out = []
    if cfg.iid:
        order = rng.permutation(len(pool))
        for i in range(cfg.participant_count):
            chunk = order[i * (n_tr + n_te) : (i + 1) * (n_tr + n_te)]
            out.append(ParticipantRecord(
                i, pool.subset(chunk[:n_tr], f"p{i}/train"), pool.subset(chunk[n_tr:], f"p{i}/test")
            ))
        return out, report

    pools = _ClassPools(pool.y, pool.class_count, rng)
    for i in range(cfg.participant_count):
        mixture = sample_dirichlet(cfg.dirichlet_alpha, pool.class_count, rng)
        tr = pools.draw(mixture, n_tr, i, "train", report)
        if cfg.test_distribution == "iid":
            te = pools.draw(pools.available().astype(np.float64), n_te, i, "test", report)
        else:
            te = pools.draw(mixture, n_te, i, "test", report)
        out.append(ParticipantRecord(i, pool.subset(tr, f"p{i}/train"), pool.subset(te, f"p{i}/test")))
    if report.fallbacks:
        log.info("partition refilled %d draws from other classes", len(report.fallbacks))
    return out, report


def corrupt(participants: list[ParticipantRecord], cfg: CorruptionConfig, class_count: int,
            seed: int) -> list[ParticipantRecord]:
    """Flag ``round(fraction * N)`` participants and relabel a fixed share of
    each flagged train batch with a uniformly drawn *different* label."""
    n = len(participants)
    k = round_half_up(cfg.corrupt_participant_fraction * n)
    flagged = set(substream(seed, "corrupt").choice(n, size=k, replace=False).tolist())
    out = []
    for pos, p in enumerate(participants):
        if pos not in flagged:
            out.append(replace(p, is_corrupted=False))
            continue
        batch = p.train_batch
        m = round_half_up(cfg.corrupt_point_fraction * len(batch))
        rng = substream(seed, "corrupt", 0, p.id)
        which = rng.choice(len(batch), size=m, replace=False)
        y = batch.y.copy()
        y[which] = (y[which] + rng.integers(1, class_count, size=m)) % class_count
        out.append(replace(p, train_batch=batch.with_labels(y), is_corrupted=True))
    return out
