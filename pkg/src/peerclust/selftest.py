"""Fast built-in invariant checks, runnable without pytest.

Each check prints one ok/FAIL line; the suite returns a nonzero exit code
if anything fails. Meant as a deployment smoke test, not a replacement
for the full test suite.
"""

import numpy as np

from . import engine
from .data import PartitionSpec, generate_gaussian_mixture, partition
from .engine import InitSpec, RunConfig
from .graph import TopologySpec, build_graph, laplacian_apply
from .losses import LossSpec, closed_form_update, loss_gradient, loss_value
from .rng import stream

_ALL_LOSSES = [
    LossSpec(kind="kmeans"),
    LossSpec(kind="huber", delta=0.7),
    LossSpec(kind="logistic"),
    LossSpec(kind="fair", eta=1.2),
]


def _check_laplacian() -> bool:
    g = build_graph(TopologySpec(kind="erdos_renyi", m=9, p=0.4, seed=11))
    rng = stream(11, "selftest_laplacian")
    ok = True
    for _ in range(20):
        u = rng.normal(size=(g.m, 3))
        lu = laplacian_apply(g, u)
        quad = float(np.sum(u * lu))
        edge_sum = sum(float(np.sum((u[i] - u[j]) ** 2)) for i, j in g.edges())
        ok &= quad >= -1e-10
        ok &= abs(quad - edge_sum) <= 1e-10 * max(1.0, abs(edge_sum))
    const = np.ones((g.m, 2))
    ok &= float(np.abs(laplacian_apply(g, const)).max()) <= 1e-12
    return ok


def _check_lambda_max() -> bool:
    ok = True
    for spec in [TopologySpec(kind="ring", m=4), TopologySpec(kind="complete", m=10),
                 TopologySpec(kind="star", m=5), TopologySpec(kind="path", m=2)]:
        g = build_graph(spec)
        dense = np.zeros((g.m, g.m))
        for i in range(g.m):
            dense[i, i] = g.degree[i]
            for j in g.neighbors[i]:
                dense[i, j] = -1.0
        ok &= abs(g.lambda_max - float(np.linalg.eigvalsh(dense)[-1])) <= 1e-8
    return ok


def _check_gradients() -> bool:
    rng = stream(7, "selftest_gradients")
    h = 1e-6
    ok = True
    for spec in _ALL_LOSSES:
        for _ in range(50):
            d = int(rng.integers(1, 5))
            x = rng.normal(size=d) * 2
            y = rng.normal(size=d) * 2
            if spec.kind == "huber" and abs(np.linalg.norm(x - y) - spec.delta) < 1e-4:
                continue
            u = rng.normal(size=d)
            u /= np.linalg.norm(u)
            fd = (loss_value(spec, x + h * u, y) - loss_value(spec, x - h * u, y)) / (2 * h)
            an = float(loss_gradient(spec, x, y) @ u)
            ok &= abs(fd - an) <= 1e-5 * (1.0 + abs(an))
    return ok


def _check_closed_forms() -> bool:
    from .data import LocalShard, ShardedDataset

    rng = stream(3, "selftest_closed_form")
    ok = True
    for spec in _ALL_LOSSES:
        for _ in range(5):
            m, K, d = 3, 2, 2
            g = build_graph(TopologySpec(kind="ring", m=m))
            counts = [3, 2, 4]
            w = rng.random(sum(counts)) + 0.1
            w /= w.sum()
            shards, pos = [], 0
            for n_i in counts:
                shards.append(LocalShard(points=rng.normal(size=(n_i, d)),
                                         weights=w[pos:pos + n_i],
                                         global_index=np.arange(pos, pos + n_i)))
                pos += n_i
            sh = ShardedDataset(shards=tuple(shards))
            x = rng.normal(size=(m, K, d))
            labels = engine.assign_clusters(x, sh)
            x1 = engine.center_round(x, labels, g, sh, spec, rho=2.0, alpha=0.05, B=1)
            off = np.concatenate([[0], np.cumsum(counts)])
            for i in range(m):
                li = labels[off[i]:off[i + 1]]
                for k in range(K):
                    mask = li == k
                    ref = closed_form_update(
                        spec.kind, x[i, k], x[list(g.neighbors[i]), k],
                        sh.shards[i].points[mask], sh.shards[i].weights[mask],
                        0.05, 2.0, delta=spec.delta, eta=spec.eta)
                    ok &= float(np.max(np.abs(ref - x1[i, k]))) <= 1e-10
    return ok


def _fixture():
    ds = generate_gaussian_mixture(3, 30, [[0, 0], [3, 0], [0, 3]], 0.5, seed=2)
    sh = partition(ds, 5, PartitionSpec(scheme="homogeneous", seed=2))
    g = build_graph(TopologySpec(kind="ring", m=5))
    return ds, sh, g


def _check_descent() -> bool:
    _, sh, g = _fixture()
    ok = True
    for spec in _ALL_LOSSES:
        cfg = RunConfig(K=3, T=60, loss=spec, rho=10.0, B=2,
                        init=InitSpec(scheme="warm_start_per_class"), seed=4)
        trace = engine.run(g, sh, cfg)
        ok &= float(np.diff(trace.J_rho).max(initial=-np.inf)) <= 1e-9
    return ok


def _check_determinism() -> bool:
    _, sh, g = _fixture()
    cfg = RunConfig(K=3, T=40, loss=LossSpec(kind="kmeans"), rho=10.0, seed=9)
    t1 = engine.run(g, sh, cfg)
    t2 = engine.run(g, sh, cfg)
    return (np.array_equal(t1.final_centers, t2.final_centers)
            and np.array_equal(t1.J_rho, t2.J_rho))


_CHECKS = [
    ("laplacian operator", _check_laplacian),
    ("spectral bound", _check_lambda_max),
    ("loss gradients", _check_gradients),
    ("closed-form updates", _check_closed_forms),
    ("cost descent", _check_descent),
    ("determinism", _check_determinism),
]


def run_all() -> int:
    failures = 0
    for name, check in _CHECKS:
        try:
            passed = check()
        except Exception as exc:  # surface the failure, keep going
            print(f"selftest: {name} ... FAIL ({exc})")
            failures += 1
            continue
        print(f"selftest: {name} ... {'ok' if passed else 'FAIL'}")
        failures += 0 if passed else 1
    return 0 if failures == 0 else 3
