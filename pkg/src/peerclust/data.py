"""Datasets: generation, CSV I/O, partitioning across users, corruption.

All randomness is drawn from named counter-based streams (:mod:`.rng`), so
every operation here is a pure function of its inputs and seed, bitwise
reproducible across platforms. Partitioning never touches coordinates or
weights; shards hold row copies of the original arrays plus the global
row indices they came from.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyFile, InvalidSpec, ParseError, RaggedRows, TooFewPoints
from .rng import stream

PARTITION_SCHEMES = ("homogeneous", "heterogeneous", "random")


@dataclass(frozen=True)
class LabeledDataset:
    """Global weighted dataset; labels are optional class ids."""

    points: np.ndarray
    weights: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if pts.ndim != 2:
            raise InvalidSpec(f"points must be (N, d), got shape {pts.shape}")
        if w.shape != (pts.shape[0],):
            raise InvalidSpec("weights must be one per point")
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise InvalidSpec("weights must lie in (0, 1]")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise InvalidSpec(f"weights must sum to 1 (got {float(w.sum()):.12f})")
        if self.labels is not None and self.labels.shape != (pts.shape[0],):
            raise InvalidSpec("labels must be one per point")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(np.unique(self.labels).size)


@dataclass(frozen=True)
class LocalShard:
    """One user's local data; ``global_index`` maps rows back to the dataset."""

    points: np.ndarray
    weights: np.ndarray
    global_index: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ShardedDataset:
    shards: Tuple[LocalShard, ...]

    @property
    def n_users(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.shards)

    @property
    def dim(self) -> int:
        return self.shards[0].points.shape[1]

    @property
    def max_shard_size(self) -> int:
        return max(s.n for s in self.shards)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "homogeneous"
    classes_per_user: Tuple[int, int] = (1, 1)
    seed: int = 0

    def validate(self, n_classes: int) -> None:
        if self.scheme not in PARTITION_SCHEMES:
            raise InvalidSpec(f"unknown partition scheme {self.scheme!r}")
        if self.scheme == "heterogeneous":
            lo, hi = self.classes_per_user
            if lo < 1 or hi < lo:
                raise InvalidSpec(f"classes_per_user range [{lo},{hi}] is invalid")
            if n_classes and hi > n_classes:
                raise InvalidSpec(
                    f"classes_per_user upper bound {hi} exceeds {n_classes} classes"
                )


def generate_gaussian_mixture(k: int, n_per: int, means, variance: float,
                              seed: int) -> LabeledDataset:
    """Draw ``n_per`` points from each of ``k`` isotropic Gaussians.

    Labels are component ids in block order; weights are uniform.
    """
    means = np.asarray(means, dtype=np.float64)
    if k < 1 or n_per < 1:
        raise InvalidSpec(f"k and n_per must be positive, got {k}, {n_per}")
    if variance <= 0:
        raise InvalidSpec(f"variance must be positive, got {variance}")
    if means.ndim != 2 or means.shape[0] != k:
        raise InvalidSpec(f"means must be (k, d), got shape {means.shape}")
    d = means.shape[1]
    sd = math.sqrt(variance)
    blocks = []
    for c in range(k):
        rng = stream(seed, "gaussian_mixture", c)
        blocks.append(means[c] + sd * rng.standard_normal((n_per, d)))
    points = np.concatenate(blocks, axis=0)
    labels = np.repeat(np.arange(k, dtype=np.int64), n_per)
    weights = np.full(k * n_per, 1.0 / (k * n_per))
    return LabeledDataset(points=points, weights=weights, labels=labels)


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_csv(path, label_column: Optional[int] = None,
             normalize: str = "none") -> LabeledDataset:
    """Load a rectangular numeric CSV, optionally with a label column.

    A header row is auto-detected when the first row has non-numeric
    entries in feature positions. Label values may be arbitrary strings
    and are mapped to ids in first-appearance order. ``normalize="max_abs"``
    divides the whole feature matrix by its largest absolute entry.
    """
    if normalize not in ("none", "max_abs"):
        raise InvalidSpec(f"unknown normalize mode {normalize!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise EmptyFile(f"{path} has no data rows")

    width = len(rows[0])
    for idx, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(f"{path}: row {idx} has {len(row)} fields, expected {width}",
                             row=idx)
    if label_column is not None and not -width <= label_column < width:
        raise InvalidSpec(f"label column {label_column} outside row width {width}")
    lcol = label_column % width if label_column is not None else None
    feature_cols = [c for c in range(width) if c != lcol]
    if not feature_cols:
        raise InvalidSpec("no feature columns left after removing the label column")

    start = 0
    if any(not _is_float(rows[0][c]) for c in feature_cols):
        start = 1  # header row
        if len(rows) == 1:
            raise EmptyFile(f"{path} has a header but no data rows")

    n = len(rows) - start
    points = np.empty((n, len(feature_cols)), dtype=np.float64)
    label_ids = {}
    labels = np.empty(n, dtype=np.int64) if lcol is not None else None
    for r in range(n):
        row = rows[start + r]
        for c_out, c in enumerate(feature_cols):
            token = row[c].strip()
            try:
                points[r, c_out] = float(token)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {token!r} at row {start + r}, column {c}",
                    row=start + r, column=c,
                ) from None
        if lcol is not None:
            token = row[lcol].strip()
            if token not in label_ids:
                label_ids[token] = len(label_ids)
            labels[r] = label_ids[token]

    if normalize == "max_abs":
        peak = float(np.abs(points).max())
        if peak > 0.0:
            points = points / peak
    weights = np.full(n, 1.0 / n)
    return LabeledDataset(points=points, weights=weights, labels=labels)


def save_csv(ds: LabeledDataset, path) -> None:
    """Write a dataset as ``f0,...,f{d-1},label`` (label -1 when absent)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        labels = ds.labels if ds.labels is not None else np.full(ds.n, -1, dtype=np.int64)
        for r in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.points[r]] + [int(labels[r])])


def _deal_round_robin(order: Sequence[int], holders: Sequence[int],
                      per_user: List[List[int]]) -> None:
    for pos, row in enumerate(order):
        per_user[holders[pos % len(holders)]].append(row)


def _class_indices(labels: np.ndarray) -> List[np.ndarray]:
    classes = np.unique(labels)
    return [np.flatnonzero(labels == c) for c in classes]


def partition(ds: LabeledDataset, m: int, spec: PartitionSpec) -> ShardedDataset:
    """Split a dataset into ``m`` non-empty shards.

    homogeneous: per class, a seeded shuffle dealt round-robin, so shard
    class counts differ by at most one. Without labels this degenerates to
    the random scheme. heterogeneous: users draw a class-count in
    ``classes_per_user`` and a uniform class subset; instances of a class
    are dealt round-robin among its holders; classes held by nobody go to
    the currently smallest shard. random: one global shuffle, dealt
    round-robin. Points and weights are carried over bitwise.
    """
    if m < 1:
        raise InvalidSpec(f"need m >= 1 users, got {m}")
    if ds.n < m:
        raise TooFewPoints(f"{ds.n} points cannot fill {m} shards")
    spec.validate(ds.n_classes)
    if spec.scheme == "heterogeneous" and ds.labels is None:
        raise InvalidSpec("heterogeneous partition requires labels")

    per_user: List[List[int]] = [[] for _ in range(m)]
    scheme = spec.scheme
    if scheme == "homogeneous" and ds.labels is None:
        scheme = "random"

    if scheme == "homogeneous":
        rng = stream(spec.seed, "partition_homogeneous")
        for rows in _class_indices(ds.labels):
            order = rows[rng.permutation(rows.size)]
            _deal_round_robin(order.tolist(), list(range(m)), per_user)
    elif scheme == "heterogeneous":
        rng = stream(spec.seed, "partition_heterogeneous")
        lo, hi = spec.classes_per_user
        class_rows = _class_indices(ds.labels)
        n_classes = len(class_rows)
        held: List[List[int]] = [[] for _ in range(n_classes)]
        for user in range(m):
            count = int(rng.integers(lo, hi + 1))
            chosen = rng.choice(n_classes, size=min(count, n_classes), replace=False)
            for c in sorted(int(c) for c in chosen):
                held[c].append(user)
        orphans = [c for c in range(n_classes) if not held[c]]
        for c in range(n_classes):
            if held[c]:
                order = class_rows[c][rng.permutation(class_rows[c].size)]
                _deal_round_robin(order.tolist(), held[c], per_user)
        for c in orphans:
            # repair: nobody drew this class, give it to the lightest user
            sizes = [len(rows) for rows in per_user]
            target = int(np.argmin(sizes))
            order = class_rows[c][rng.permutation(class_rows[c].size)]
            _deal_round_robin(order.tolist(), [target], per_user)
    else:  # random
        rng = stream(spec.seed, "partition_random")
        order = rng.permutation(ds.n)
        _deal_round_robin(order.tolist(), list(range(m)), per_user)

    # repair empty shards by moving one point from the largest shard
    for user in range(m):
        while not per_user[user]:
            sizes = [len(rows) for rows in per_user]
            donor = int(np.argmax(sizes))
            if sizes[donor] <= 1:
                raise TooFewPoints("cannot repair empty shard without emptying another")
            per_user[user].append(per_user[donor].pop())

    shards = []
    for rows in per_user:
        idx = np.asarray(rows, dtype=np.int64)
        shards.append(
            LocalShard(
                points=ds.points[idx],
                weights=ds.weights[idx],
                global_index=idx,
                labels=None if ds.labels is None else ds.labels[idx],
            )
        )
    return ShardedDataset(shards=tuple(shards))


def unit_weight_shards(sh: ShardedDataset) -> ShardedDataset:
    """Replace every point weight with 1.0 (unweighted-sum convention).

    The engine treats weights as plain multipliers; unit weights give the
    plain-sum dynamics used by the reference benchmark runs. The weights
    then sum to N, not 1, so costs are N times the normalized convention
    and the penalty parameter is effectively rescaled.
    """
    return ShardedDataset(shards=tuple(
        LocalShard(points=s.points, weights=np.full(s.n, 1.0),
                   global_index=s.global_index, labels=s.labels)
        for s in sh.shards))


def inject_outliers(ds: LabeledDataset, fraction: float, noise_mean: float,
                    noise_variance: float, seed: int) -> LabeledDataset:
    """Turn a seeded per-class sample of points into a new outlier class.

    Per class, ``ceil(fraction * n_c)`` points get independent
    ``N(noise_mean, noise_variance)`` added to every coordinate and are
    relabeled to a fresh class id; everything else is untouched.
    """
    if ds.labels is None:
        raise InvalidSpec("inject_outliers requires labels")
    if not 0.0 < fraction < 1.0:
        raise InvalidSpec(f"fraction must be in (0,1), got {fraction}")
    if noise_variance <= 0:
        raise InvalidSpec(f"noise variance must be positive, got {noise_variance}")

    points = ds.points.copy()
    labels = ds.labels.copy()
    outlier_id = int(labels.max()) + 1
    sd = math.sqrt(noise_variance)
    for c_pos, rows in enumerate(_class_indices(ds.labels)):
        n_sel = math.ceil(fraction * rows.size)
        rng = stream(seed, "inject_outliers", c_pos)
        chosen = rows[rng.choice(rows.size, size=n_sel, replace=False)]
        noise = noise_mean + sd * rng.standard_normal((n_sel, ds.dim))
        points[chosen] = points[chosen] + noise
        labels[chosen] = outlier_id
    return LabeledDataset(points=points, weights=ds.weights.copy(), labels=labels)
