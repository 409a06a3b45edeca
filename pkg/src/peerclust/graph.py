"""Communication topologies and the graph Laplacian operator.

Graphs are undirected, connected and unweighted. The Laplacian is exposed
as an operator (no dense matrix is kept); its largest eigenvalue is
computed once at construction by deterministic power iteration and cached,
since it enters the step-size rule of every distributed run.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    InvalidSpec,
    NoConvergence,
    RetriesExhausted,
)
from .rng import pair_uniform

TOPOLOGY_KINDS = ("ring", "complete", "star", "path", "erdos_renyi", "custom")

_ER_MAX_RETRIES = 100
_POWER_TOL = 1e-12
_POWER_MAX_ITER = 10_000


@dataclass(frozen=True)
class TopologySpec:
    """Declarative description of a communication topology.

    ``p`` and ``seed`` apply to ``erdos_renyi`` only; ``edges`` to
    ``custom`` only. ``m >= 2`` always (a distributed run needs more than
    one user).
    """

    kind: str
    m: int
    p: float = 0.5
    seed: int = 0
    edges: Optional[Sequence[Tuple[int, int]]] = None

    def validate(self) -> None:
        if self.kind not in TOPOLOGY_KINDS:
            raise InvalidSpec(f"unknown topology kind {self.kind!r}")
        if self.m < 2:
            raise InvalidSpec(f"need at least 2 users, got m={self.m}")
        if self.kind == "erdos_renyi" and not 0.0 < self.p <= 1.0:
            raise InvalidSpec(f"erdos_renyi requires p in (0,1], got {self.p}")
        if self.kind == "custom":
            if self.edges is None:
                raise InvalidSpec("custom topology requires an edge list")
            for i, j in self.edges:
                if not (0 <= i < self.m and 0 <= j < self.m):
                    raise InvalidSpec(f"edge ({i},{j}) references vertex outside [0,{self.m})")
                if i == j:
                    raise InvalidSpec(f"self-loop ({i},{i}) not allowed")


@dataclass(frozen=True)
class Graph:
    """Immutable connected graph with cached Laplacian spectral bound."""

    m: int
    neighbors: Tuple[Tuple[int, ...], ...]
    degree: Tuple[int, ...]
    lambda_max: float
    indptr: np.ndarray = field(repr=False, compare=False, default=None)
    indices: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def max_degree(self) -> int:
        return max(self.degree)

    def edge_count(self) -> int:
        return sum(self.degree) // 2

    def edges(self):
        for i in range(self.m):
            for j in self.neighbors[i]:
                if i < j:
                    yield (i, j)


def _neighbor_sets(m: int, edges) -> list:
    nbrs = [set() for _ in range(m)]
    for i, j in edges:
        if i != j:
            nbrs[i].add(j)
            nbrs[j].add(i)
    return nbrs


def _is_connected(nbrs) -> bool:
    m = len(nbrs)
    seen = [False] * m
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == m


def _sample_er_edges(m: int, p: float, seed: int):
    # One uniform per unordered pair, keyed by (seed, i, j): the sampled
    # graph does not depend on iteration order.
    return [
        (i, j)
        for i in range(m)
        for j in range(i + 1, m)
        if pair_uniform(seed, "erdos_renyi_edge", i, j) < p
    ]


def build_graph(spec: TopologySpec) -> Graph:
    """Construct a connected :class:`Graph` from a topology spec.

    Erdos-Renyi graphs are resampled with an incremented seed until
    connected; after 100 consecutive failures :class:`RetriesExhausted`
    is raised. A disconnected custom edge list raises
    :class:`DisconnectedGraph`.
    """
    spec.validate()
    m = spec.m
    if spec.kind == "ring":
        edges = [(i, (i + 1) % m) for i in range(m)]
    elif spec.kind == "path":
        edges = [(i, i + 1) for i in range(m - 1)]
    elif spec.kind == "complete":
        edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    elif spec.kind == "star":
        edges = [(0, i) for i in range(1, m)]  # vertex 0 is the hub
    elif spec.kind == "erdos_renyi":
        seed = spec.seed
        for _ in range(_ER_MAX_RETRIES):
            edges = _sample_er_edges(m, spec.p, seed)
            if edges and _is_connected(_neighbor_sets(m, edges)):
                break
            seed += 1
        else:
            raise RetriesExhausted(
                f"no connected G({m},{spec.p}) graph in {_ER_MAX_RETRIES} attempts "
                f"starting from seed {spec.seed}"
            )
    else:  # custom
        edges = list(spec.edges)

    nbrs = _neighbor_sets(m, edges)
    if not _is_connected(nbrs):
        raise DisconnectedGraph(f"{spec.kind} edge list yields a disconnected graph")

    neighbors = tuple(tuple(sorted(s)) for s in nbrs)
    degree = tuple(len(s) for s in neighbors)
    lam = _power_iteration_lambda_max(neighbors, degree)

    dmax = max(degree)
    # Standard Laplacian bounds; violation would mean a broken eigensolve.
    assert lam >= dmax - 1e-6 * dmax, f"lambda_max {lam} below max degree {dmax}"
    assert lam <= 2 * dmax * (1 + 1e-9), f"lambda_max {lam} above 2*max degree {2 * dmax}"

    indptr = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        indptr[i + 1] = indptr[i] + degree[i]
    indices = np.fromiter(
        (j for i in range(m) for j in neighbors[i]), dtype=np.int64, count=int(indptr[-1])
    )
    return Graph(m=m, neighbors=neighbors, degree=degree, lambda_max=lam,
                 indptr=indptr, indices=indices)


def laplacian_apply(graph: Graph, x) -> np.ndarray:
    """Apply the Laplacian to a per-vertex field.

    ``x`` has shape ``(m,)`` or ``(m, q)``; output row ``i`` is
    ``degree(i) * x[i] - sum_{j in N(i)} x[j]`` with neighbours summed in
    ascending order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != graph.m:
        raise DimensionMismatch(f"field has {x.shape[0]} rows, graph has {graph.m} vertices")
    out = np.empty_like(x)
    for i in range(graph.m):
        acc = graph.degree[i] * x[i]
        for j in graph.neighbors[i]:
            acc = acc - x[j]
        out[i] = acc
    return out


def laplacian_quadratic(graph: Graph, x) -> float:
    """Return <x, Lx> for a per-vertex field (always >= 0)."""
    x = np.asarray(x, dtype=np.float64)
    lx = laplacian_apply(graph, x)
    return float(np.sum(x * lx))


def lambda_max(graph: Graph) -> float:
    """Largest Laplacian eigenvalue (cached at construction)."""
    return graph.lambda_max


def _power_iteration_lambda_max(neighbors, degree, tol=_POWER_TOL, max_iter=_POWER_MAX_ITER):
    """Deterministic power iteration for the top Laplacian eigenvalue.

    The start vector is all-ones plus an index-linear perturbation; the
    ones component lies in the Laplacian's null space and is annihilated
    by the first operator application, leaving a generic vector for the
    top eigenspace. Convergence is declared when the Rayleigh quotient
    moves by at most ``tol`` (relative) between iterations.
    """
    m = len(neighbors)
    v = 1.0 + np.arange(m, dtype=np.float64) / m
    v /= np.linalg.norm(v)

    def apply_l(u):
        out = np.empty_like(u)
        for i in range(m):
            acc = degree[i] * u[i]
            for j in neighbors[i]:
                acc -= u[j]
            out[i] = acc
        return out

    lam = 0.0
    for _ in range(max_iter):
        w = apply_l(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v fell entirely into the null space; reseed orthogonally to 1.
            v = np.arange(m, dtype=np.float64) - (m - 1) / 2.0
            v /= np.linalg.norm(v)
            continue
        v_next = w / norm_w
        lam_next = float(v_next @ apply_l(v_next))
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        lam = lam_next
        v = v_next
    residual = float(np.linalg.norm(apply_l(v) - lam * v))
    raise NoConvergence(
        f"power iteration hit {max_iter} iterations (estimate {lam}, residual {residual})",
        estimate=lam,
        residual=residual,
    )


def read_edge_list(path) -> list:
    """Read a custom topology file: one ``i j`` pair per line, '#' comments."""
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise InvalidSpec(f"{path}:{lineno}: expected 'i j', got {stripped!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise InvalidSpec(f"{path}:{lineno}: non-integer vertex id") from exc
            edges.append((i, j))
    return edges
