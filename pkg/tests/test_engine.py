import numpy as np
import pytest

import peerclust as pc
from peerclust import (
    InitSpec,
    LossSpec,
    RunConfig,
    TopologySpec,
    assign_clusters,
    build_graph,
    center_round,
    compute_step_size,
    consensus_gap,
    cost_J,
    cost_J_rho,
    fixed_point_residual,
    global_assignment,
    lloyd_oracle,
    run,
    run_centralized,
    run_local,
)
from peerclust.data import (
    LabeledDataset,
    LocalShard,
    PartitionSpec,
    ShardedDataset,
    generate_gaussian_mixture,
    partition,
    unit_weight_shards,
)
from peerclust.engine import _singleton_graphs, initial_centers
from peerclust.errors import InvalidSpec, NonFiniteState
from peerclust.losses import closed_form_update
from peerclust.rng import stream

ALL_SPECS = [
    LossSpec(kind="kmeans"),
    LossSpec(kind="huber", delta=0.9),
    LossSpec(kind="logistic"),
    LossSpec(kind="fair", eta=1.4),
]


def make_shards(point_lists, weight_lists, labels_lists=None):
    shards = []
    pos = 0
    for i, pts in enumerate(point_lists):
        pts = np.asarray(pts, dtype=np.float64).reshape(len(pts), -1)
        w = np.asarray(weight_lists[i], dtype=np.float64)
        labels = None if labels_lists is None else np.asarray(labels_lists[i])
        shards.append(LocalShard(points=pts, weights=w,
                                 global_index=np.arange(pos, pos + len(pts)),
                                 labels=labels))
        pos += len(pts)
    return ShardedDataset(shards=tuple(shards))


def random_problem(rng, kind="kmeans", delta=0.9, eta=1.4):
    m = int(rng.integers(2, 6))
    k_count = int(rng.integers(1, 4))
    d = int(rng.integers(1, 6))
    edges = [(i, (i + 1) % m) for i in range(m)]
    for i in range(m):
        for j in range(i + 2, m):
            if rng.random() < 0.3:
                edges.append((i, j))
    graph = build_graph(TopologySpec(kind="custom", m=m, edges=edges))
    counts = [int(rng.integers(1, 8)) for _ in range(m)]
    w_all = rng.random(sum(counts)) + 0.05
    w_all /= w_all.sum()
    pts, ws, pos = [], [], 0
    for n_i in counts:
        pts.append(rng.normal(size=(n_i, d)) * 2)
        ws.append(w_all[pos:pos + n_i])
        pos += n_i
    shards = make_shards(pts, ws)
    x = rng.normal(size=(m, k_count, d))
    return graph, shards, x, counts


# ---------------------------------------------------------------- step size

def test_step_size_theorem1_example():
    assert compute_step_size("auto_theorem1", 1.0, 1.0, 4.0) == pytest.approx(0.198)


def test_step_size_experimental_formula():
    ring10 = build_graph(TopologySpec(kind="ring", m=10))
    alpha = compute_step_size("auto_experimental", 1.0, 10.0, ring10.lambda_max,
                              m=10, max_shard=15)
    # golden value: lambda_max of the 10-ring is exactly 4
    assert alpha == pytest.approx(1.0 / 35.0, rel=1e-9)


def test_step_size_rho_limit_monotone():
    prev = 0.0
    for rho in [1, 10, 100, 1000, 1e6]:
        alpha = compute_step_size("auto_theorem1", 2.0, rho, 4.0)
        assert alpha > prev
        prev = alpha
    assert prev < 0.99 / 4.0 and prev == pytest.approx(0.99 / 4.0, rel=1e-5)


def test_step_size_errors():
    with pytest.raises(InvalidSpec):
        compute_step_size("auto_theorem1", -1.0, 1.0, 4.0)
    with pytest.raises(InvalidSpec):
        compute_step_size("auto_experimental", 1.0, 1.0, 4.0)
    with pytest.raises(InvalidSpec):
        compute_step_size(-0.5, 1.0, 1.0, 4.0)
    assert compute_step_size(0.125, 1.0, 1.0, 4.0) == 0.125


# ---------------------------------------------------------------- assignment

def test_assign_nearest_center():
    sh = make_shards([[[1.0], [9.0]]], [[0.5, 0.5]])
    centers = np.array([[[0.0], [10.0]]])
    assert assign_clusters(centers, sh).tolist() == [0, 1]


def test_assign_tie_breaks_low():
    sh = make_shards([[[5.0]]], [[1.0]])
    centers = np.array([[[0.0], [10.0]]])
    assert assign_clusters(centers, sh).tolist() == [0]


def test_assign_single_cluster():
    sh = make_shards([[[1.0], [2.0], [-4.0]]], [[0.3, 0.3, 0.4]])
    centers = np.array([[[100.0]]])
    assert assign_clusters(centers, sh).tolist() == [0, 0, 0]


def test_assign_optimality_recheck_exact():
    rng = stream(17, "test_assign_optimality")
    for _ in range(20):
        _, shards, x, counts = random_problem(rng)
        labels = assign_clusters(x, shards)
        off = np.concatenate([[0], np.cumsum(counts)])
        for i, shard in enumerate(shards.shards):
            li = labels[off[i]:off[i + 1]]
            for r in range(shard.n):
                dists = np.linalg.norm(x[i] - shard.points[r][None, :], axis=1)
                assert dists[li[r]] <= dists.min()
                assert li[r] == int(np.argmin(dists))  # lowest-index tie break


# ---------------------------------------------------------------- one round

def test_center_round_single_user_matches_closed_form():
    sh = make_shards([[[2.0]]], [[1.0]])
    g = _singleton_graphs(1)
    x = np.array([[[0.0]]])
    out = center_round(x, np.array([0], dtype=np.int32), g, sh,
                       LossSpec(kind="kmeans"), rho=1.0, alpha=0.5, B=1)
    assert out[0, 0, 0] == pytest.approx(1.0, abs=1e-15)


def test_center_round_consensus_state_empty_clusters_fixed():
    g = build_graph(TopologySpec(kind="ring", m=3))
    sh = make_shards([[[0.0]], [[0.0]], [[0.0]]], [[1 / 3]] * 3)
    x = np.full((3, 2, 1), 7.5)
    labels = np.zeros(3, dtype=np.int32)  # cluster 1 empty everywhere
    out = center_round(x, labels, g, sh, LossSpec(kind="fair", eta=1.0),
                       rho=2.0, alpha=0.1, B=4)
    assert np.array_equal(out[:, 1, :], x[:, 1, :])


def test_center_round_hand_example():
    g = build_graph(TopologySpec(kind="path", m=2))
    sh = make_shards([[[0.0]], [[2.0]]], [[0.5], [0.5]])
    x = np.array([[[0.0]], [[2.0]]])
    labels = assign_clusters(x, sh)
    out = center_round(x, labels, g, sh, LossSpec(kind="kmeans"),
                       rho=1.0, alpha=0.1, B=1)
    assert out.ravel().tolist() == [0.2, 1.8]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_center_round_matches_closed_forms(spec):
    rng = stream(10, "test_equiv_" + spec.kind)
    for _ in range(25):
        graph, shards, x, counts = random_problem(rng)
        alpha = float(rng.random() * 0.1 + 0.01)
        rho = float(rng.random() * 20 + 1)
        labels = assign_clusters(x, shards)
        out = center_round(x, labels, graph, shards, spec, rho=rho, alpha=alpha, B=1)
        off = np.concatenate([[0], np.cumsum(counts)])
        for i in range(graph.m):
            li = labels[off[i]:off[i + 1]]
            for k in range(x.shape[1]):
                mask = li == k
                ref = closed_form_update(
                    spec.kind, x[i, k], x[list(graph.neighbors[i]), k],
                    shards.shards[i].points[mask], shards.shards[i].weights[mask],
                    alpha, rho, delta=spec.delta, eta=spec.eta)
                assert np.max(np.abs(ref - out[i, k])) <= 1e-10


def test_empty_cluster_moves_by_consensus_only():
    g = build_graph(TopologySpec(kind="path", m=2))
    # user 0's points all go to cluster 0; cluster 1 empty at user 0
    sh = make_shards([[[0.0], [0.1]], [[5.0]]], [[0.25, 0.25], [0.5]])
    x = np.array([[[0.0], [9.0]], [[5.0], [8.0]]])
    labels = assign_clusters(x, sh)
    out = center_round(x, labels, g, sh, LossSpec(kind="kmeans"),
                       rho=3.0, alpha=0.05, B=1)
    consensus_only = x[0, 1] - 0.05 * (x[0, 1] - x[1, 1])
    assert np.array_equal(out[0, 1], consensus_only)


# ---------------------------------------------------------------- costs

def test_cost_zero_when_centers_on_points():
    sh = make_shards([[[1.0], [3.0]]], [[0.5, 0.5]])
    centers = np.array([[[1.0], [3.0]]])
    labels = assign_clusters(centers, sh)
    assert cost_J(centers, labels, sh, LossSpec(kind="kmeans")) == 0.0
    assert cost_J(centers, labels, sh, LossSpec(kind="fair", eta=2.0)) == 0.0


def test_cost_single_user_example():
    sh = make_shards([[[0.0], [2.0]]], [[0.5, 0.5]])
    centers = np.array([[[1.0]]])
    labels = np.zeros(2, dtype=np.int32)
    assert cost_J(centers, labels, sh, LossSpec(kind="kmeans")) == pytest.approx(0.5)


def test_cost_j_rho_consensus_state(ring10, iris_shards):
    sh = iris_shards()
    centers = np.tile(np.array([[5.0, 3.0, 1.5, 0.2], [6.0, 3.0, 5.0, 1.8],
                                [7.0, 3.0, 6.0, 2.0]]), (10, 1, 1))
    labels = assign_clusters(centers, sh)
    spec = LossSpec(kind="kmeans")
    for rho in [1.0, 7.0, 100.0]:
        assert cost_J_rho(centers, labels, sh, ring10, spec, rho) == pytest.approx(
            cost_J(centers, labels, sh, spec) / rho, rel=1e-12)


def test_cost_j_rho_rho_limit_and_quadratic():
    g = build_graph(TopologySpec(kind="path", m=2))
    sh = make_shards([[[0.0]], [[2.0]]], [[0.5], [0.5]])
    centers = np.array([[[0.0]], [[2.0]]])
    labels = assign_clusters(centers, sh)
    spec = LossSpec(kind="kmeans")
    # <x, Lx> = (0-2)^2 = 4, so the penalty term alone is 2
    big = cost_J_rho(centers, labels, sh, g, spec, rho=1e12)
    assert big == pytest.approx(2.0, rel=1e-9)


def test_consensus_gap_cases():
    assert consensus_gap(np.full((4, 2, 3), 1.7)) == 0.0
    x = np.zeros((2, 1, 2))
    x[1, 0] = [0.0, 3.0]
    assert consensus_gap(x) == 3.0
    y = np.zeros((3, 1, 1))
    y[0, 0, 0], y[1, 0, 0], y[2, 0, 0] = 0.0, 1.0, 2.5
    assert consensus_gap(y) == 2.5


def test_fixed_point_residual_at_weighted_mean():
    sh = make_shards([[[0.0], [4.0]]], [[0.75, 0.25]])
    g = _singleton_graphs(1)
    centers = np.array([[[1.0]]])  # 0.75*0 + 0.25*4
    labels = np.zeros(2, dtype=np.int32)
    res = fixed_point_residual(centers, labels, sh, g, LossSpec(kind="kmeans"), rho=1.0)
    assert res <= 1e-12


def test_fixed_point_residual_scales_inversely_with_rho():
    rng = stream(12, "test_residual_rho")
    ds = generate_gaussian_mixture(2, 10, np.array([[0.0, 0.0], [4.0, 4.0]]), 0.4, seed=3)
    sh = partition(ds, 4, PartitionSpec(scheme="homogeneous", seed=3))
    g = build_graph(TopologySpec(kind="complete", m=4))
    glab_true = ds.labels
    lloyd = lloyd_oracle(ds, glab_true)
    centers = np.tile(lloyd[None, :, :], (4, 1, 1))
    labels = assign_clusters(centers, sh)
    spec = LossSpec(kind="kmeans")
    res = [fixed_point_residual(centers, labels, sh, g, spec, rho)
           for rho in [1.0, 10.0, 100.0]]
    assert res[0] == pytest.approx(10 * res[1], rel=1e-9)
    assert res[1] == pytest.approx(10 * res[2], rel=1e-9)


def test_residual_consensus_term_only_for_empty_user():
    g = build_graph(TopologySpec(kind="path", m=2))
    sh = make_shards([[[0.0]], [[5.0]]], [[0.5], [0.5]])
    centers = np.array([[[0.0], [1.0]], [[5.0], [2.0]]])
    labels = assign_clusters(centers, sh)  # cluster 1 empty at both users
    res = fixed_point_residual(centers, labels, sh, g, LossSpec(kind="kmeans"), rho=1e15)
    # only the Laplacian part survives: per user per cluster (x_i - x_j)
    expected = np.sqrt((0 - 5) ** 2 * 2 + (1 - 2) ** 2 * 2)
    assert res == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------- full runs

def test_run_requires_t_at_least_one(iris_shards, ring10):
    with pytest.raises(InvalidSpec):
        RunConfig(K=3, T=0, loss=LossSpec(kind="kmeans")).validate()


def test_run_requires_k_distinct_samples():
    sh = make_shards([[[0.0]], [[1.0]]], [[0.5], [0.5]])
    g = build_graph(TopologySpec(kind="path", m=2))
    cfg = RunConfig(K=5, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="random_local_sample"), seed=0)
    with pytest.raises(InvalidSpec):
        run(g, sh, cfg)


def test_run_k1_reaches_fixed_point_near_global_mean():
    ds = generate_gaussian_mixture(1, 24, np.array([[1.0, -2.0]]), 0.5, seed=6)
    sh = partition(ds, 4, PartitionSpec(scheme="random", seed=6))
    g = build_graph(TopologySpec(kind="complete", m=4))
    cfg = RunConfig(K=1, T=3000, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    alpha="auto_theorem1", init=InitSpec(scheme="random_local_sample"),
                    seed=6)
    tr = run(g, sh, cfg)
    assert tr.fixed_point_residual[-1] < 1e-6
    # at a fixed point the shard-weighted average of user centers is the
    # global weighted mean exactly (the ones vector annihilates L)
    mean = (ds.weights[:, None] * ds.points).sum(axis=0)
    shard_w = np.array([s.weights.sum() for s in sh.shards])
    avg = np.average(tr.final_centers[:, 0, :], axis=0, weights=shard_w)
    assert np.linalg.norm(avg - mean) < 1e-9
    assert tr.consensus_gap[-1] < 0.1  # users drawn toward a common point


def test_run_reassignment_never_increases_cost(iris_shards, ring10):
    sh = iris_shards()
    spec = LossSpec(kind="logistic")
    cfg = RunConfig(K=3, T=1, loss=spec, rho=10.0, B=1, alpha="auto_theorem1",
                    init=InitSpec(scheme="warm_start_per_class"), seed=2)
    x = initial_centers(sh, cfg)
    labels = assign_clusters(x, sh)
    for _ in range(40):
        x = center_round(x, labels, ring10, sh, spec, rho=10.0, alpha=0.2, B=1)
        new_labels = assign_clusters(x, sh)
        assert cost_J(x, new_labels, sh, spec) <= cost_J(x, labels, sh, spec) + 1e-12
        labels = new_labels


def test_run_table_gap_replication_unit_weights(iris, ring10):
    # reference protocol: per-point weight 1, warm start, B=1, T=500
    sh = unit_weight_shards(partition(iris, 10, PartitionSpec(scheme="homogeneous", seed=21)))
    alpha = compute_step_size("auto_experimental", 1.0, 1000.0, ring10.lambda_max,
                              m=10, max_shard=sh.max_shard_size)
    cfg = RunConfig(K=3, T=500, loss=LossSpec(kind="kmeans"), rho=1000.0, B=1,
                    alpha=alpha, init=InitSpec(scheme="warm_start_per_class"), seed=21)
    tr = run(ring10, sh, cfg)
    gap = tr.consensus_gap[-1]
    assert 5e-3 / 3 <= gap <= 5e-3 * 3


def test_run_determinism_bitwise(iris_shards, ring10):
    sh = iris_shards()
    cfg = RunConfig(K=3, T=60, loss=LossSpec(kind="huber", delta=5.0), rho=10.0,
                    B=2, init=InitSpec(scheme="warm_start_per_class"), seed=11)
    t1 = run(ring10, sh, cfg)
    t2 = run(ring10, sh, cfg)
    assert np.array_equal(t1.final_centers, t2.final_centers)
    assert np.array_equal(t1.J_rho, t2.J_rho)
    assert np.array_equal(t1.final_assignment, t2.final_assignment)


def test_run_parallel_matches_sequential(iris_shards, ring10):
    sh = iris_shards()
    base = dict(K=3, T=80, loss=LossSpec(kind="fair", eta=1.0), rho=10.0, B=3,
                init=InitSpec(scheme="warm_start_per_class"), seed=12)
    seq = run(ring10, sh, RunConfig(**base))
    par = run(ring10, sh, RunConfig(**base, parallel=True, n_threads=3))
    assert np.abs(seq.final_centers - par.final_centers).max() <= 1e-12
    assert np.abs(seq.J_rho - par.J_rho).max() <= 1e-12


def test_run_hull_containment(iris, iris_shards, ring10):
    sh = iris_shards()
    cfg = RunConfig(K=3, T=120, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    init=InitSpec(scheme="warm_start_per_class"), seed=13)
    x0 = initial_centers(sh, cfg)
    lo = np.minimum(iris.points.min(axis=0), x0.min(axis=(0, 1)))
    hi = np.maximum(iris.points.max(axis=0), x0.max(axis=(0, 1)))
    worst = {"v": 0.0}

    def on_round(t, centers, labels):
        worst["v"] = max(worst["v"],
                         float(np.maximum(lo - centers, 0.0).max()),
                         float(np.maximum(centers - hi, 0.0).max()))

    run(ring10, sh, cfg, on_round=on_round)
    assert worst["v"] <= 1e-9


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning",
                            "ignore:invalid value:RuntimeWarning")
def test_run_nonfinite_aborts_with_partial_trace(iris_shards, ring10):
    sh = iris_shards()
    cfg = RunConfig(K=3, T=50, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    alpha=1e9, init=InitSpec(scheme="warm_start_per_class"), seed=1)
    with pytest.raises(NonFiniteState) as err:
        run(ring10, sh, cfg)
    assert err.value.round_index is not None
    assert err.value.trace is not None


def test_early_stop():
    ds = generate_gaussian_mixture(1, 12, np.array([[0.0]]), 0.1, seed=9)
    sh = partition(ds, 3, PartitionSpec(scheme="random", seed=9))
    g = build_graph(TopologySpec(kind="complete", m=3))
    cfg = RunConfig(K=1, T=5000, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    init=InitSpec(scheme="random_local_sample"), seed=9,
                    early_stop=True, early_stop_tol=1e-2)
    tr = run(g, sh, cfg)
    assert tr.stopped_early_at is not None
    assert len(tr.J_rho) == tr.stopped_early_at < 5000
    assert tr.consensus_gap[-1] < 1e-2 and tr.fixed_point_residual[-1] < 1e-2


# ---------------------------------------------------------------- baselines

def test_centralized_equals_one_vertex_run(iris):
    cfg = RunConfig(K=3, T=40, loss=LossSpec(kind="kmeans"), rho=1.0, B=2,
                    init=InitSpec(scheme="random_local_sample"), seed=3)
    tr_c = run_centralized(iris, cfg)
    single = ShardedDataset(shards=(LocalShard(
        points=iris.points, weights=iris.weights,
        global_index=np.arange(iris.n), labels=iris.labels),))
    tr_g = run(_singleton_graphs(1), single, cfg)
    assert np.array_equal(tr_c.final_centers, tr_g.final_centers)
    assert np.array_equal(tr_c.J_rho, tr_g.J_rho)


def test_centralized_large_b_approaches_lloyd(iris):
    cfg = RunConfig(K=3, T=25, loss=LossSpec(kind="kmeans"), rho=1.0, B=200,
                    alpha="auto_theorem1",
                    init=InitSpec(scheme="warm_start_per_class"), seed=4)
    tr = run_centralized(iris, cfg)
    lloyd = lloyd_oracle(iris, tr.final_assignment)
    assert np.abs(tr.final_centers[0] - lloyd).max() < 1e-6


def test_centralized_cost_non_increasing(iris):
    cfg = RunConfig(K=3, T=150, loss=LossSpec(kind="logistic"), rho=1.0, B=1,
                    init=InitSpec(scheme="random_local_sample"), seed=5)
    tr = run_centralized(iris, cfg)
    assert np.diff(tr.J_rho).max() <= 1e-9


def test_run_local_isolated_and_permutable(iris):
    sh = partition(iris, 4, PartitionSpec(scheme="homogeneous", seed=7))
    cfg = RunConfig(K=3, T=30, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    init=InitSpec(scheme="warm_start_per_class"), seed=7)
    traces = run_local(sh, cfg)
    assert len(traces) == 4
    permuted = ShardedDataset(shards=sh.shards[::-1])
    traces_rev = run_local(permuted, cfg)
    for a, b in zip(traces, traces_rev[::-1]):
        assert np.array_equal(a.final_centers, b.final_centers)


def test_run_local_accuracy_comparable_to_centralized(iris):
    # homogeneous shards are miniature copies of the global data, so
    # isolated per-user clustering scores close to the centralized run
    sh = partition(iris, 10, PartitionSpec(scheme="homogeneous", seed=5))
    cfg = RunConfig(K=3, T=150, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    alpha="auto_theorem1",
                    init=InitSpec(scheme="warm_start_per_class"), seed=5)
    local_accs = []
    for shard, trace in zip(sh.shards, run_local(sh, cfg)):
        pred = pc.metrics.nearest_center_labels(iris.points, trace.final_centers[0])
        local_accs.append(pc.permutation_accuracy(iris.labels, pred))
    central = run_centralized(iris, cfg)
    pred = pc.metrics.nearest_center_labels(iris.points, central.final_centers[0])
    central_acc = pc.permutation_accuracy(iris.labels, pred)
    assert abs(float(np.mean(local_accs)) - central_acc) <= 0.1
    assert float(np.mean(local_accs)) > 0.8


def test_run_local_single_shard_equals_centralized(iris):
    single = partition(iris, 1, PartitionSpec(scheme="random", seed=2))
    cfg = RunConfig(K=3, T=30, loss=LossSpec(kind="kmeans"), rho=1.0, B=1,
                    init=InitSpec(scheme="random_local_sample"), seed=2)
    local = run_local(single, cfg)[0]
    central = run_centralized(LabeledDataset(
        points=single.shards[0].points,
        weights=single.shards[0].weights / single.shards[0].weights.sum(),
        labels=single.shards[0].labels), cfg)
    assert np.array_equal(local.final_centers, central.final_centers)


# ---------------------------------------------------------------- oracle

def test_lloyd_oracle_examples():
    ds = LabeledDataset(points=np.array([[0.0], [2.0]]), weights=np.array([0.5, 0.5]))
    assert lloyd_oracle(ds, np.zeros(2))[0, 0] == 1.0
    ds2 = LabeledDataset(points=np.array([[0.0], [4.0]]), weights=np.array([0.75, 0.25]))
    assert lloyd_oracle(ds2, np.zeros(2))[0, 0] == 1.0
    ds3 = LabeledDataset(points=np.array([[3.5], [9.0]]), weights=np.array([0.5, 0.5]))
    out = lloyd_oracle(ds3, np.array([0, 1]))
    assert out[0, 0] == 3.5 and out[1, 0] == 9.0


def test_lloyd_oracle_empty_cluster():
    ds = LabeledDataset(points=np.array([[0.0], [2.0]]), weights=np.array([0.5, 0.5]))
    prev = np.array([[7.0], [1.0], [42.0]])
    out = lloyd_oracle(ds, np.array([0, 1]), prev_centers=prev)
    assert out[2, 0] == 42.0
    out2 = lloyd_oracle(ds, np.array([0, 0]), prev_centers=prev)
    assert out2[1, 0] == 1.0  # kept from prev
    out3 = lloyd_oracle(ds, np.array([0, 0]))
    assert out3[0, 0] == 1.0


def test_global_assignment_maps_back(iris):
    sh = partition(iris, 6, PartitionSpec(scheme="homogeneous", seed=1))
    flat = np.concatenate([np.full(s.n, i, dtype=np.int32)
                           for i, s in enumerate(sh.shards)])
    glab = global_assignment(sh, flat)
    for i, s in enumerate(sh.shards):
        assert np.all(glab[s.global_index] == i)


# ---------------------------------------------------------------- init

def test_warm_start_requires_k_classes(iris_shards):
    sh = iris_shards()
    cfg = RunConfig(K=4, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="warm_start_per_class"), seed=0)
    with pytest.raises(InvalidSpec):
        initial_centers(sh, cfg)


def test_warm_start_draws_class_samples(iris, iris_shards):
    sh = iris_shards()
    cfg = RunConfig(K=3, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="warm_start_per_class"), seed=1)
    x0 = initial_centers(sh, cfg)
    for i, shard in enumerate(sh.shards):
        for k in range(3):
            rows = shard.points[shard.labels == k]
            assert any(np.array_equal(x0[i, k], r) for r in rows)


def test_warm_start_missing_class_falls_back_to_local_sample(iris):
    sh = partition(iris, 15, PartitionSpec(scheme="heterogeneous",
                                           classes_per_user=(2, 2), seed=3))
    cfg = RunConfig(K=3, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="warm_start_per_class"), seed=1)
    x0 = initial_centers(sh, cfg)
    for i, shard in enumerate(sh.shards):
        for k in range(3):
            assert any(np.array_equal(x0[i, k], r) for r in shard.points)


def test_random_local_sample_small_shard_replaces():
    sh = make_shards([[[1.0]], [[2.0], [3.0]]], [[0.4], [0.3, 0.3]])
    cfg = RunConfig(K=3, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="random_local_sample"), seed=0)
    x0 = initial_centers(sh, cfg)
    assert np.all(x0[0] == 1.0)  # only one point available


def test_explicit_init_shape_checked():
    sh = make_shards([[[1.0]], [[2.0]]], [[0.5], [0.5]])
    cfg = RunConfig(K=2, T=1, loss=LossSpec(kind="kmeans"),
                    init=InitSpec(scheme="explicit",
                                  explicit_centers=np.zeros((2, 1, 1))), seed=0)
    with pytest.raises(InvalidSpec):
        initial_centers(sh, cfg)


def test_run_with_mahalanobis_metric_descends(iris_shards, ring10):
    a = np.diag([2.0, 1.0, 1.0, 0.5])
    spec = LossSpec(kind="kmeans",
                    metric=pc.MetricSpec(kind="mahalanobis", matrix=a))
    sh = iris_shards()
    cfg = RunConfig(K=3, T=100, loss=spec, rho=10.0, B=1, alpha="auto_theorem1",
                    init=InitSpec(scheme="warm_start_per_class"), seed=3)
    tr = run(ring10, sh, cfg)
    assert np.isfinite(tr.final_centers).all()
    assert np.diff(tr.J_rho).max() <= 1e-9


def test_more_users_same_quality_slower_convergence(iris):
    # unweighted-sum sweep over the network size: asymptotic quality is
    # unchanged while assignments take longer to settle on a bigger ring
    aris, stab = [], []
    for m in [10, 30]:
        sh = unit_weight_shards(partition(iris, m, PartitionSpec(scheme="random", seed=1)))
        g = build_graph(TopologySpec(kind="ring", m=m))
        alpha = compute_step_size("auto_theorem1", beta=float(sh.max_shard_size),
                                  rho=100.0, lam_max=g.lambda_max)
        cfg = RunConfig(K=3, T=2000, loss=LossSpec(kind="kmeans"), rho=100.0, B=1,
                        alpha=alpha, init=InitSpec(scheme="random_local_sample"), seed=1)
        tr = run(g, sh, cfg)
        _, ar = pc.per_user_scores(iris.points, iris.labels, tr.final_centers)
        aris.append(float(ar.mean()))
        stab.append(int(np.flatnonzero(tr.cluster_changes > 0)[-1] + 1))
    assert abs(aris[0] - aris[1]) <= 0.15
    assert stab[1] > stab[0]


# ------------------------------------------------- consensus rate property

def test_consensus_rate_slope_default_convention(iris, ring10):
    gaps = []
    for rho in [1.0, 10.0, 100.0, 1000.0]:
        sh = partition(iris, 10, PartitionSpec(scheme="homogeneous", seed=5))
        cfg = RunConfig(K=3, T=500, loss=LossSpec(kind="kmeans"), rho=rho, B=1,
                        alpha="auto_theorem1",
                        init=InitSpec(scheme="warm_start_per_class"), seed=5)
        gaps.append(float(run(ring10, sh, cfg).consensus_gap[-1]))
    slope = np.polyfit(np.log10([1, 10, 100, 1000]), np.log10(gaps), 1)[0]
    assert -1.25 <= slope <= -0.75
