"""The distributed clustering engine.

Each outer round assigns every local point to its nearest center (lowest
index on ties), then performs ``B`` synchronous, double-buffered center
sub-rounds: every (user, cluster) center moves against the sum of a
consensus term (Laplacian disagreement with neighbours) and an innovation
term (1/rho times the weighted local loss gradient over the cluster's
points). Empty clusters move by consensus alone.

The per-round trace records the penalized cost, the raw clustering cost,
the maximum center distance between users, the norm of the full penalized
gradient, and the number of points that changed cluster. All accumulation
runs in a fixed order (users, neighbours and coordinates ascending, points
in shard order), so a run is bitwise reproducible; the optional
thread-parallel mode only splits independent per-user work and reproduces
the sequential results exactly.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from . import kernels
from .data import LabeledDataset, LocalShard, ShardedDataset
from .errors import DimensionMismatch, InvalidSpec, NonFiniteState
from .graph import Graph, laplacian_apply
from .losses import LOSS_CODE, LossSpec, MetricSpec, smoothness_bound
from .rng import stream

INIT_SCHEMES = ("random_local_sample", "warm_start_per_class", "explicit")
ALPHA_MODES = ("auto_theorem1", "auto_experimental")

_EARLY_STOP_PATIENCE = 10


@dataclass(frozen=True)
class InitSpec:
    """How users pick their initial centers.

    ``random_local_sample`` draws K local points per user (with
    replacement only if the shard is smaller than K);
    ``warm_start_per_class`` draws one local point per true class, falling
    back to a uniform local draw for classes the user does not hold;
    ``explicit`` uses the supplied (m, K, d) tensor.
    """

    scheme: str = "random_local_sample"
    explicit_centers: Optional[np.ndarray] = None
    seed: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    K: int
    T: int
    loss: LossSpec
    rho: float = 1.0
    B: int = 1
    alpha: Union[str, float] = "auto_theorem1"
    init: InitSpec = InitSpec()
    seed: int = 0
    early_stop: bool = False
    early_stop_tol: float = 1e-9
    parallel: bool = False
    n_threads: int = 4

    def validate(self) -> None:
        if self.K < 1:
            raise InvalidSpec(f"K must be >= 1, got {self.K}")
        if self.T < 1:
            raise InvalidSpec(f"T must be >= 1, got {self.T}")
        if self.B < 1:
            raise InvalidSpec(f"B must be >= 1, got {self.B}")
        if self.rho < 1.0:
            raise InvalidSpec(f"rho must be >= 1, got {self.rho}")
        if isinstance(self.alpha, str):
            if self.alpha not in ALPHA_MODES:
                raise InvalidSpec(f"unknown alpha mode {self.alpha!r}")
        elif not self.alpha > 0:
            raise InvalidSpec(f"explicit alpha must be positive, got {self.alpha}")
        if self.init.scheme not in INIT_SCHEMES:
            raise InvalidSpec(f"unknown init scheme {self.init.scheme!r}")
        self.loss.validate()


@dataclass
class RunTrace:
    """Per-round diagnostics plus the final state of a run."""

    J_rho: np.ndarray
    J: np.ndarray
    consensus_gap: np.ndarray
    fixed_point_residual: np.ndarray
    cluster_changes: np.ndarray
    alpha_used: float
    initial_centers: np.ndarray
    final_centers: np.ndarray
    final_assignment: np.ndarray  # flat int32, shard rows concatenated
    shard_offsets: np.ndarray
    stopped_early_at: Optional[int] = None

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, len(self.J_rho) + 1)

    def per_user_assignment(self) -> Tuple[np.ndarray, ...]:
        off = self.shard_offsets
        return tuple(self.final_assignment[off[i]:off[i + 1]]
                     for i in range(len(off) - 1))


class _Workspace:
    """Flat kernel-ready views of a sharded dataset and graph."""

    def __init__(self, graph: Graph, shards: ShardedDataset, loss: LossSpec):
        if graph.m != shards.n_users:
            raise DimensionMismatch(
                f"graph has {graph.m} vertices but dataset has {shards.n_users} shards")
        self.graph = graph
        self.shards = shards
        self.loss = loss
        self.m = graph.m
        self.d = shards.dim
        self.points = np.ascontiguousarray(
            np.concatenate([s.points for s in shards.shards], axis=0))
        self.weights = np.ascontiguousarray(
            np.concatenate([s.weights for s in shards.shards]))
        offsets = np.zeros(self.m + 1, dtype=np.int64)
        for i, s in enumerate(shards.shards):
            offsets[i + 1] = offsets[i] + s.n
        self.offsets = offsets
        self.n = int(offsets[-1])
        self.indptr = graph.indptr
        self.indices = graph.indices
        self.loss_code = LOSS_CODE[loss.kind]
        self.loss_param = loss.delta if loss.kind == "huber" else loss.eta
        if loss.metric.kind == "mahalanobis":
            self.amat = np.ascontiguousarray(loss.metric.matrix, dtype=np.float64)
            if self.amat.shape != (self.d, self.d):
                raise DimensionMismatch(
                    f"metric matrix is {self.amat.shape}, data dim is {self.d}")
        else:
            self.amat = None

    def user_ranges(self, n_chunks: int) -> List[Tuple[int, int]]:
        n_chunks = max(1, min(n_chunks, self.m))
        bounds = np.linspace(0, self.m, n_chunks + 1).astype(int)
        return [(int(bounds[i]), int(bounds[i + 1]))
                for i in range(n_chunks) if bounds[i] < bounds[i + 1]]


def compute_step_size(mode: Union[str, float], beta: float, rho: float,
                      lam_max: float, m: Optional[int] = None,
                      max_shard: Optional[int] = None) -> float:
    """Resolve the step size for a run.

    ``auto_theorem1`` takes 0.99 of the strict stability bound
    1/(beta/rho + lambda_max); ``auto_experimental`` uses the preset
    1/(2 m max_shard / rho + lambda_max + 1); a number passes through.
    """
    if not isinstance(mode, str):
        if not mode > 0:
            raise InvalidSpec(f"explicit alpha must be positive, got {mode}")
        return float(mode)
    if beta <= 0 or lam_max < 0 or rho < 1:
        raise InvalidSpec(f"bad step-size inputs: beta={beta}, lam_max={lam_max}, rho={rho}")
    if mode == "auto_theorem1":
        return 0.99 / (beta / rho + lam_max)
    if mode == "auto_experimental":
        if m is None or max_shard is None:
            raise InvalidSpec("auto_experimental needs m and max_shard")
        if m < 1 or max_shard < 1:
            raise InvalidSpec(f"bad step-size inputs: m={m}, max_shard={max_shard}")
        return 1.0 / (2.0 * m * max_shard / rho + lam_max + 1.0)
    raise InvalidSpec(f"unknown alpha mode {mode!r}")


def _assign_into(ws: _Workspace, centers: np.ndarray, out: np.ndarray,
                 pool: Optional[ThreadPoolExecutor]) -> None:
    if pool is None:
        kernels.assign_clusters(centers, ws.points, ws.offsets, ws.amat, out, 0, ws.m)
        return
    futures = [
        pool.submit(kernels.assign_clusters, centers, ws.points, ws.offsets,
                    ws.amat, out, lo, hi)
        for lo, hi in ws.user_ranges(pool._max_workers)
    ]
    for f in futures:
        f.result()


def _grad_into(ws: _Workspace, centers: np.ndarray, labels: np.ndarray,
               inv_rho: float, out: np.ndarray,
               pool: Optional[ThreadPoolExecutor]) -> None:
    if pool is None:
        kernels.grad_field(centers, ws.indptr, ws.indices, ws.points, ws.weights,
                           labels, ws.offsets, ws.loss_code, ws.loss_param,
                           inv_rho, ws.amat, out, 0, ws.m)
        return
    futures = [
        pool.submit(kernels.grad_field, centers, ws.indptr, ws.indices, ws.points,
                    ws.weights, labels, ws.offsets, ws.loss_code, ws.loss_param,
                    inv_rho, ws.amat, out, lo, hi)
        for lo, hi in ws.user_ranges(pool._max_workers)
    ]
    for f in futures:
        f.result()


def assign_clusters(centers: np.ndarray, shards: ShardedDataset,
                    metric: MetricSpec = MetricSpec()) -> np.ndarray:
    """Assign every local point to its nearest center of its own user.

    Returns a flat int32 vector over concatenated shards; ties resolve to
    the lowest cluster index. Clusters may come out empty.
    """
    loss = LossSpec(kind="kmeans", metric=metric)
    graph = _singleton_graphs(shards.n_users)
    ws = _Workspace(graph, shards, loss)
    centers = _check_centers(centers, ws)
    out = np.empty(ws.n, dtype=np.int32)
    kernels.assign_clusters(centers, ws.points, ws.offsets, ws.amat, out, 0, ws.m)
    return out


def _check_centers(centers, ws: _Workspace) -> np.ndarray:
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if centers.ndim != 3 or centers.shape[0] != ws.m or centers.shape[2] != ws.d:
        raise DimensionMismatch(
            f"centers must be (m={ws.m}, K, d={ws.d}), got {centers.shape}")
    return centers


def _singleton_graphs(m: int) -> Graph:
    # edgeless placeholder graph used when only shard layout matters
    indptr = np.zeros(m + 1, dtype=np.int64)
    return Graph(m=m, neighbors=tuple(() for _ in range(m)),
                 degree=tuple(0 for _ in range(m)), lambda_max=0.0,
                 indptr=indptr, indices=np.zeros(0, dtype=np.int64))


def center_round(centers: np.ndarray, clustering: np.ndarray, graph: Graph,
                 shards: ShardedDataset, loss: LossSpec, rho: float,
                 alpha: float, B: int = 1) -> np.ndarray:
    """Run ``B`` synchronous center sub-rounds and return the new state."""
    if alpha <= 0:
        raise InvalidSpec(f"alpha must be positive, got {alpha}")
    ws = _Workspace(graph, shards, loss)
    centers = _check_centers(centers, ws)
    labels = np.ascontiguousarray(clustering, dtype=np.int32)
    if labels.shape != (ws.n,):
        raise DimensionMismatch(f"clustering must be flat ({ws.n},), got {labels.shape}")
    grad = np.empty_like(centers)
    x = centers
    for b in range(B):
        _grad_into(ws, x, labels, 1.0 / rho, grad, None)
        x = x - alpha * grad
        _check_finite(x, b, trace=None)
    return x


def _check_finite(centers: np.ndarray, round_index: int, trace) -> None:
    if np.isfinite(centers).all():
        return
    bad = np.argwhere(~np.isfinite(centers))
    i, k = int(bad[0][0]), int(bad[0][1])
    raise NonFiniteState(
        f"non-finite center for user {i}, cluster {k} at round {round_index}",
        round_index=round_index, user=i, cluster=k, trace=trace)


def cost_J(centers: np.ndarray, clustering: np.ndarray, shards: ShardedDataset,
           loss: LossSpec) -> float:
    """Clustering cost: weighted loss summed over users, clusters, points."""
    ws = _Workspace(_singleton_graphs(shards.n_users), shards, loss)
    centers = _check_centers(centers, ws)
    labels = np.ascontiguousarray(clustering, dtype=np.int32)
    return float(kernels.weighted_cost(centers, ws.points, ws.weights, labels,
                                       ws.offsets, ws.loss_code, ws.loss_param,
                                       ws.amat))


def _quadratic_penalty(graph: Graph, centers: np.ndarray) -> float:
    field_ = centers.reshape(graph.m, -1)
    return float(np.sum(field_ * laplacian_apply(graph, field_)))


def cost_J_rho(centers: np.ndarray, clustering: np.ndarray, shards: ShardedDataset,
               graph: Graph, loss: LossSpec, rho: float) -> float:
    """Penalized cost (1/rho) J + 1/2 <x, Lx>."""
    return cost_J(centers, clustering, shards, loss) / rho \
        + 0.5 * _quadratic_penalty(graph, centers)


def consensus_gap(centers: np.ndarray) -> float:
    """Maximum euclidean distance between any two users' stacked centers."""
    m = centers.shape[0]
    flat = centers.reshape(m, -1)
    diff = flat[:, None, :] - flat[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).max())


def fixed_point_residual(centers: np.ndarray, clustering: np.ndarray,
                         shards: ShardedDataset, graph: Graph, loss: LossSpec,
                         rho: float) -> float:
    """Norm of the full penalized-cost gradient (1/rho) grad J + Lx."""
    ws = _Workspace(graph, shards, loss)
    centers = _check_centers(centers, ws)
    labels = np.ascontiguousarray(clustering, dtype=np.int32)
    grad = np.empty_like(centers)
    _grad_into(ws, centers, labels, 1.0 / rho, grad, None)
    return float(np.linalg.norm(grad.ravel()))


def initial_centers(shards: ShardedDataset, config: RunConfig) -> np.ndarray:
    """Build the (m, K, d) initial center tensor per the init spec."""
    init = config.init
    m, d, K = shards.n_users, shards.dim, config.K
    seed = config.seed if init.seed is None else init.seed
    if init.scheme == "explicit":
        if init.explicit_centers is None:
            raise InvalidSpec("explicit init requires explicit_centers")
        x0 = np.ascontiguousarray(init.explicit_centers, dtype=np.float64)
        if x0.shape != (m, K, d):
            raise InvalidSpec(f"explicit centers must be {(m, K, d)}, got {x0.shape}")
        return x0.copy()

    x0 = np.empty((m, K, d))
    if init.scheme == "random_local_sample":
        for i, shard in enumerate(shards.shards):
            rng = stream(seed, "init_random", i)
            replace = shard.n < K
            idx = rng.choice(shard.n, size=K, replace=replace)
            x0[i] = shard.points[idx]
        return x0

    # warm_start_per_class
    labels_all = [s.labels for s in shards.shards]
    if any(lbl is None for lbl in labels_all):
        raise InvalidSpec("warm_start_per_class requires labels on every shard")
    classes = np.unique(np.concatenate(labels_all))
    if classes.size != K:
        raise InvalidSpec(
            f"warm_start_per_class needs K == number of classes ({classes.size}), got K={K}")
    for i, shard in enumerate(shards.shards):
        rng = stream(seed, "init_warm", i)
        for k, c in enumerate(classes):
            rows = np.flatnonzero(shard.labels == c)
            if rows.size:
                x0[i, k] = shard.points[rows[int(rng.integers(rows.size))]]
            else:
                # user does not hold this class: uniform local fallback
                x0[i, k] = shard.points[int(rng.integers(shard.n))]
    return x0


def run(graph: Graph, shards: ShardedDataset, config: RunConfig,
        on_round: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None
        ) -> RunTrace:
    """Execute ``T`` rounds of assignment + ``B`` center sub-rounds.

    ``on_round(round_index, centers, labels)`` is invoked after each
    round's diagnostics with the freshly updated state (read-only use).
    Raises :class:`NonFiniteState` with the partial trace attached if the
    state diverges.
    """
    config.validate()
    ws = _Workspace(graph, shards, config.loss)
    if ws.n < config.K:
        raise InvalidSpec(f"dataset has {ws.n} points but K={config.K}")

    # Per-pair smoothness covers weights summing to at most one; larger
    # shard weights (e.g. unit-weight runs) scale the stability bound.
    w_max = max(float(s.weights.sum()) for s in shards.shards)
    beta = smoothness_bound(config.loss).beta * max(1.0, w_max)
    alpha = compute_step_size(config.alpha, beta, config.rho, graph.lambda_max,
                              m=ws.m, max_shard=shards.max_shard_size)
    x = initial_centers(shards, config)
    x = _check_centers(x, ws)
    x0 = x.copy()
    inv_rho = 1.0 / config.rho

    pool = None
    if config.parallel and config.n_threads > 1:
        pool = ThreadPoolExecutor(max_workers=config.n_threads)

    j_rho_hist: List[float] = []
    j_hist: List[float] = []
    gap_hist: List[float] = []
    resid_hist: List[float] = []
    change_hist: List[int] = []
    stopped_early_at = None

    labels = np.empty(ws.n, dtype=np.int32)
    prev_labels = None
    grad = np.empty_like(x)
    calm_rounds = 0

    def _partial_trace():
        return _make_trace(j_rho_hist, j_hist, gap_hist, resid_hist, change_hist,
                           alpha, x0, x, labels, ws, stopped_early_at)

    try:
        for t in range(config.T):
            _assign_into(ws, x, labels, pool)
            if prev_labels is None:
                changes = ws.n
            else:
                changes = int(np.count_nonzero(labels != prev_labels))
            for b in range(config.B):
                _grad_into(ws, x, labels, inv_rho, grad, pool)
                # overflow to inf is caught by the finiteness check below
                with np.errstate(over="ignore", invalid="ignore"):
                    x = x - alpha * grad
                if not np.isfinite(x).all():
                    _check_finite(x, t + 1, trace=_partial_trace())

            j = float(kernels.weighted_cost(x, ws.points, ws.weights, labels,
                                            ws.offsets, ws.loss_code,
                                            ws.loss_param, ws.amat))
            _grad_into(ws, x, labels, inv_rho, grad, pool)
            resid = float(np.linalg.norm(grad.ravel()))
            gap = consensus_gap(x)
            j_hist.append(j)
            j_rho_hist.append(j * inv_rho + 0.5 * _quadratic_penalty(graph, x))
            gap_hist.append(gap)
            resid_hist.append(resid)
            change_hist.append(changes)
            prev_labels = labels.copy()
            if on_round is not None:
                on_round(t + 1, x, labels)
            if config.early_stop:
                if gap < config.early_stop_tol and resid < config.early_stop_tol:
                    calm_rounds += 1
                    if calm_rounds >= _EARLY_STOP_PATIENCE:
                        stopped_early_at = t + 1
                        break
                else:
                    calm_rounds = 0
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return _make_trace(j_rho_hist, j_hist, gap_hist, resid_hist, change_hist,
                       alpha, x0, x, prev_labels, ws, stopped_early_at)


def _make_trace(j_rho, j, gap, resid, changes, alpha, x0, x, labels, ws,
                stopped_early_at) -> RunTrace:
    return RunTrace(
        J_rho=np.asarray(j_rho), J=np.asarray(j),
        consensus_gap=np.asarray(gap), fixed_point_residual=np.asarray(resid),
        cluster_changes=np.asarray(changes, dtype=np.int64),
        alpha_used=float(alpha), initial_centers=x0, final_centers=x,
        final_assignment=np.array(labels, dtype=np.int32, copy=True),
        shard_offsets=ws.offsets.copy(),
        stopped_early_at=stopped_early_at,
    )


def _as_single_shard(dataset: LabeledDataset) -> ShardedDataset:
    shard = LocalShard(points=dataset.points, weights=dataset.weights,
                       global_index=np.arange(dataset.n, dtype=np.int64),
                       labels=dataset.labels)
    return ShardedDataset(shards=(shard,))


def run_centralized(dataset: LabeledDataset, config: RunConfig,
                    on_round=None) -> RunTrace:
    """Single-user baseline: no consensus term, rho pinned to 1.

    ``auto_theorem1`` resolves to 0.99/beta; ``auto_experimental`` to the
    centralized preset 1/(2 N).
    """
    shards = _as_single_shard(dataset)
    alpha = config.alpha
    if alpha == "auto_experimental":
        alpha = 1.0 / (2.0 * dataset.n)
    cfg = replace_config(config, rho=1.0, alpha=alpha, parallel=False)
    return run(_singleton_graphs(1), shards, cfg, on_round=on_round)


def run_local(shards: ShardedDataset, config: RunConfig) -> List[RunTrace]:
    """Per-user isolated baseline: run_centralized on each shard.

    Shard weights are renormalized to sum to one, so each user solves its
    own self-contained problem; permuting the shards permutes the traces.
    """
    traces = []
    for shard in shards.shards:
        local = LabeledDataset(points=shard.points.copy(),
                               weights=shard.weights / shard.weights.sum(),
                               labels=None if shard.labels is None else shard.labels.copy())
        traces.append(run_centralized(local, config))
    return traces


def replace_config(config: RunConfig, **kw) -> RunConfig:
    base = dict(K=config.K, T=config.T, loss=config.loss, rho=config.rho,
                B=config.B, alpha=config.alpha, init=config.init,
                seed=config.seed, early_stop=config.early_stop,
                early_stop_tol=config.early_stop_tol, parallel=config.parallel,
                n_threads=config.n_threads)
    base.update(kw)
    return RunConfig(**base)


def global_assignment(shards: ShardedDataset, flat_labels: np.ndarray,
                      n_total: Optional[int] = None) -> np.ndarray:
    """Map a flat shard-order clustering back to original dataset rows."""
    if n_total is None:
        n_total = shards.n
    out = np.full(n_total, -1, dtype=np.int64)
    pos = 0
    for shard in shards.shards:
        out[shard.global_index] = flat_labels[pos:pos + shard.n]
        pos += shard.n
    return out


def lloyd_oracle(dataset: LabeledDataset, clustering: np.ndarray,
                 prev_centers: Optional[np.ndarray] = None) -> np.ndarray:
    """Weight-normalized cluster means of a global clustering.

    ``clustering`` holds a cluster index per dataset row. An empty cluster
    keeps the caller-supplied previous center, or falls back to the global
    weighted mean.
    """
    clustering = np.asarray(clustering)
    k_count = int(clustering.max()) + 1 if clustering.size else 0
    if prev_centers is not None:
        prev_centers = np.asarray(prev_centers, dtype=np.float64)
        k_count = max(k_count, prev_centers.shape[0])
    centers = np.empty((k_count, dataset.dim))
    global_mean = (dataset.weights[:, None] * dataset.points).sum(axis=0) \
        / dataset.weights.sum()
    for k in range(k_count):
        rows = np.flatnonzero(clustering == k)
        if rows.size:
            wk = dataset.weights[rows]
            centers[k] = (wk[:, None] * dataset.points[rows]).sum(axis=0) / wk.sum()
        elif prev_centers is not None:
            centers[k] = prev_centers[k]
        else:
            centers[k] = global_mean
    return centers
