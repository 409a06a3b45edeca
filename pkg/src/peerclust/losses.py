"""Clustering losses, their gradients and smoothness constants.

Each loss is a nondecreasing scalar transform of the assignment distance
``g`` (euclidean by default, Mahalanobis optionally), which makes cluster
reassignment cost-decreasing by construction. Gradients have the form
``gamma(x, y) * (x - y)`` (or ``gamma * A (x - y)`` under Mahalanobis);
``gamma`` as a function of the squared distance is the single place the
per-loss weighting lives, shared with the compiled kernels.

``closed_form_update`` implements the per-loss one-step center updates in
their expanded convex-combination form. It exists purely as an independent
test oracle for the generic engine step and is deliberately written
against different (vectorized) arithmetic.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InvalidSpec

LOSS_KINDS = ("kmeans", "huber", "logistic", "fair")
METRIC_KINDS = ("euclidean", "mahalanobis")

# integer codes shared with the compiled kernels
LOSS_CODE = {"kmeans": 0, "huber": 1, "logistic": 2, "fair": 3}

_LOG_EXP_CUTOFF = 30.0  # above this, log(1+exp(s)) = s + log1p(exp(-s))


@dataclass(frozen=True)
class MetricSpec:
    """Assignment distance: euclidean or Mahalanobis with SPD matrix."""

    kind: str = "euclidean"
    matrix: Optional[np.ndarray] = None

    def validate(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise InvalidSpec(f"unknown metric kind {self.kind!r}")
        if self.kind == "mahalanobis":
            if self.matrix is None:
                raise InvalidSpec("mahalanobis metric requires a matrix")
            a = np.asarray(self.matrix, dtype=np.float64)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise InvalidSpec(f"mahalanobis matrix must be square, got {a.shape}")
            if np.max(np.abs(a - a.T)) > 1e-12:
                raise InvalidSpec("mahalanobis matrix must be symmetric (tol 1e-12)")
            try:
                np.linalg.cholesky(a)
            except np.linalg.LinAlgError as exc:
                raise InvalidSpec("mahalanobis matrix must be positive definite") from exc
        elif self.matrix is not None:
            raise InvalidSpec("euclidean metric takes no matrix")


@dataclass(frozen=True)
class LossSpec:
    """A loss kind with its parameters and paired assignment metric."""

    kind: str
    delta: float = 1.0
    eta: float = 1.0
    metric: MetricSpec = MetricSpec()

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise InvalidSpec(f"unknown loss kind {self.kind!r}")
        if self.kind == "huber" and not self.delta > 0:
            raise InvalidSpec(f"huber requires delta > 0, got {self.delta}")
        if self.kind == "fair" and not self.eta > 0:
            raise InvalidSpec(f"fair requires eta > 0, got {self.eta}")
        self.metric.validate()


@dataclass(frozen=True)
class SmoothnessBound:
    beta: float


def _check_same_dim(x, y):
    if x.shape != y.shape:
        raise DimensionMismatch(f"point shapes differ: {x.shape} vs {y.shape}")


def distance(metric: MetricSpec, x, y) -> float:
    """Assignment distance g(x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_dim(x, y)
    d = x - y
    if metric.kind == "euclidean":
        return float(np.sqrt(np.dot(d, d)))
    a = np.asarray(metric.matrix, dtype=np.float64)
    if a.shape[0] != d.shape[0]:
        raise DimensionMismatch(f"metric matrix is {a.shape}, points have dim {d.shape[0]}")
    return float(np.sqrt(d @ a @ d))


def scalar_loss(kind: str, g: float, delta: float = 1.0, eta: float = 1.0) -> float:
    """Loss as a function of the assignment distance g >= 0."""
    if kind == "kmeans":
        return 0.5 * g * g
    if kind == "huber":
        if g <= delta:
            return 0.5 * g * g
        return delta * g - 0.5 * delta * delta
    if kind == "logistic":
        s = g * g
        if s > _LOG_EXP_CUTOFF:
            return s + math.log1p(math.exp(-s))
        return math.log1p(math.exp(s))
    if kind == "fair":
        s = g * g
        return 2.0 * eta * eta * (s / eta - math.log1p(s / eta))
    raise InvalidSpec(f"unknown loss kind {kind!r}")


def loss_value(spec: LossSpec, x, y) -> float:
    return scalar_loss(spec.kind, distance(spec.metric, x, y), spec.delta, spec.eta)


def gamma_of_sqdist(kind: str, s: float, delta: float = 1.0, eta: float = 1.0) -> float:
    """Gradient weight gamma such that grad f = gamma * (x - y), with s = g^2.

    kmeans: 1; huber: 1 for g <= delta else delta/g;
    logistic: 2 / (1 + exp(-s)); fair: 4*eta*(1 - eta/(eta + s)).
    """
    if kind == "kmeans":
        return 1.0
    if kind == "huber":
        g = math.sqrt(s)
        if g <= delta:
            return 1.0
        return delta / g
    if kind == "logistic":
        return 2.0 / (1.0 + math.exp(-s))
    if kind == "fair":
        return 4.0 * eta * (1.0 - eta / (eta + s))
    raise InvalidSpec(f"unknown loss kind {kind!r}")


def loss_gradient(spec: LossSpec, x, y) -> np.ndarray:
    """Gradient of the loss w.r.t. the center x.

    Under the euclidean metric this is gamma(x,y) * (x - y). Under
    Mahalanobis it is gamma(g) * A (x - y), provided for completeness but
    outside the consensus analysis assumptions (the engine warns on such
    runs).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_dim(x, y)
    d = x - y
    if spec.metric.kind == "euclidean":
        s = float(np.dot(d, d))
        direction = d
    else:
        a = np.asarray(spec.metric.matrix, dtype=np.float64)
        direction = a @ d
        s = float(d @ direction)
    return gamma_of_sqdist(spec.kind, s, spec.delta, spec.eta) * direction


def smoothness_bound(spec: LossSpec) -> SmoothnessBound:
    """Smallest known beta with grad f beta-Lipschitz in the center.

    kmeans and huber use the halved-square convention f = phi(||x-y||)
    with phi(g) = g^2/2 inside the quadratic region, so their gradients
    are 1-Lipschitz.
    """
    if spec.kind == "kmeans":
        return SmoothnessBound(1.0)
    if spec.kind == "huber":
        return SmoothnessBound(1.0)
    if spec.kind == "logistic":
        return SmoothnessBound(2.0 + 4.0 * math.exp(-1.0))
    if spec.kind == "fair":
        eta = spec.eta
        return SmoothnessBound(8.0 * eta + 8.0 * max(1.0, eta * eta))
    raise InvalidSpec(f"unknown loss kind {spec.kind!r}")


def closed_form_update(
    kind: str,
    x,
    neighbor_centers,
    points,
    weights,
    alpha: float,
    rho: float,
    delta: float = 1.0,
    eta: float = 1.0,
) -> np.ndarray:
    """One-step center update in expanded closed form (test oracle).

    ``x`` is the current center, ``neighbor_centers`` an (n_j, d) array of
    neighbours' current estimates, ``points``/``weights`` the center's
    cluster members. Empty clusters reduce every variant to the pure
    consensus step.
    """
    x = np.asarray(x, dtype=np.float64)
    nbrs = np.asarray(neighbor_centers, dtype=np.float64).reshape(-1, x.shape[0])
    pts = np.asarray(points, dtype=np.float64).reshape(-1, x.shape[0])
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if pts.shape[0] != w.shape[0]:
        raise DimensionMismatch(f"{pts.shape[0]} points but {w.shape[0]} weights")
    n_nbr = nbrs.shape[0]
    nbr_sum = nbrs.sum(axis=0) if n_nbr else np.zeros_like(x)

    if kind == "kmeans":
        wsum = w.sum()
        coef = 1.0 - alpha * (wsum / rho + n_nbr)
        return coef * x + (alpha / rho) * (w[:, None] * pts).sum(axis=0) + alpha * nbr_sum

    if kind == "huber":
        dist = np.linalg.norm(x[None, :] - pts, axis=1)
        near = dist <= delta
        far = ~near
        far_scale = np.zeros_like(w)
        far_scale[far] = delta * w[far] / dist[far]
        data_term = (w[near, None] * pts[near]).sum(axis=0) + (
            far_scale[far, None] * pts[far]
        ).sum(axis=0)
        coef = 1.0 - alpha * (w[near].sum() / rho + far_scale[far].sum() / rho + n_nbr)
        return alpha * nbr_sum + (alpha / rho) * data_term + coef * x

    if kind == "logistic":
        s = ((x[None, :] - pts) ** 2).sum(axis=1)
        lam = 2.0 * w / (1.0 + np.exp(-s))
        return (
            (alpha / rho) * (lam[:, None] * pts).sum(axis=0)
            + alpha * (nbr_sum - n_nbr * x)
            + (1.0 - (alpha / rho) * lam.sum()) * x
        )

    if kind == "fair":
        s = ((x[None, :] - pts) ** 2).sum(axis=1)
        lam = 4.0 * w * s / (1.0 + s / eta)
        return (
            (alpha / rho) * (lam[:, None] * pts).sum(axis=0)
            + alpha * (nbr_sum - n_nbr * x)
            + (1.0 - (alpha / rho) * lam.sum()) * x
        )

    raise InvalidSpec(f"unknown loss kind {kind!r}")
