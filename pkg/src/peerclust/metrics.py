"""Clustering quality measures: permutation accuracy and ARI."""

from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyInput, LengthMismatch


def _as_labels(a) -> np.ndarray:
    return np.asarray(a).reshape(-1)


def contingency_matrix(a, b) -> np.ndarray:
    """Counts n[i, j] of points with label a_i in the first and b_j in the second."""
    a = _as_labels(a)
    b = _as_labels(b)
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"label vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((int(ai.max()) + 1, int(bi.max()) + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def permutation_accuracy(truth, predicted) -> float:
    """Highest matching fraction over injective predicted-to-truth label maps.

    Computed by maximum-weight assignment on the (padded square)
    contingency matrix.
    """
    truth = _as_labels(truth)
    predicted = _as_labels(predicted)
    if truth.size == 0:
        raise EmptyInput("cannot score empty label vectors")
    table = contingency_matrix(truth, predicted)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum()) / truth.size


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected pairwise agreement between two clusterings.

    Follows the permutation-model definition; may be negative. When the
    expected and maximum indices coincide (degenerate partitions), returns
    1.0 iff the two clusterings are identical as partitions, else 0.0.
    """
    a = _as_labels(a)
    b = _as_labels(b)
    table = contingency_matrix(a, b)
    n = a.shape[0]
    if n < 2:
        raise EmptyInput("ARI needs at least two points")

    def comb2(x) -> float:
        return float(x * (x - 1)) / 2.0

    sum_ij = float(sum(comb2(v) for v in table.ravel()))
    sum_a = float(sum(comb2(v) for v in table.sum(axis=1)))
    sum_b = float(sum(comb2(v) for v in table.sum(axis=0)))
    total = comb2(n)
    expected = sum_a * sum_b / total
    denom = 0.5 * (sum_a + sum_b) - expected
    if denom == 0.0:
        # both all-singletons or both one-cluster: identical partitions
        # iff the contingency table is a (scaled) permutation matrix
        identical = np.all((table > 0).sum(axis=0) <= 1) and np.all(
            (table > 0).sum(axis=1) <= 1)
        return 1.0 if identical else 0.0
    return (sum_ij - expected) / denom


def per_user_scores(points, truth, centers, metric_matrix: Optional[np.ndarray] = None,
                    shards=None, scope: str = "global") -> Tuple[np.ndarray, np.ndarray]:
    """Accuracy and ARI of every user's centers.

    Each user induces a clustering by assigning points to its nearest
    center. ``scope="global"`` scores every user against the full dataset
    (the consensus-faithful reading); ``scope="local"`` scores each user
    only on its own shard (requires ``shards``).
    """
    points = np.asarray(points, dtype=np.float64)
    truth = _as_labels(truth)
    centers = np.asarray(centers, dtype=np.float64)
    m = centers.shape[0]
    accs = np.empty(m)
    aris = np.empty(m)
    for i in range(m):
        if scope == "global":
            pred = nearest_center_labels(points, centers[i], metric_matrix)
            accs[i] = permutation_accuracy(truth, pred)
            aris[i] = adjusted_rand_index(truth, pred)
        elif scope == "local":
            if shards is None:
                raise EmptyInput("local scope needs the sharded dataset")
            shard = shards.shards[i]
            pred = nearest_center_labels(shard.points, centers[i], metric_matrix)
            accs[i] = permutation_accuracy(truth[shard.global_index], pred)
            aris[i] = adjusted_rand_index(truth[shard.global_index], pred)
        else:
            raise EmptyInput(f"unknown scope {scope!r}")
    return accs, aris


def nearest_center_labels(points, centers, metric_matrix: Optional[np.ndarray] = None
                          ) -> np.ndarray:
    """Assign each point to its nearest center (lowest index on ties)."""
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    diff = points[:, None, :] - centers[None, :, :]
    if metric_matrix is None:
        sq = (diff * diff).sum(axis=2)
    else:
        a = np.asarray(metric_matrix, dtype=np.float64)
        sq = np.einsum("pkc,cd,pkd->pk", diff, a, diff)
    return np.argmin(sq, axis=1).astype(np.int64)
