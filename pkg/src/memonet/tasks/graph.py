"""Shortest-path queries on random K-nearest-neighbour graphs.

Nodes are uniform points in the unit square; each node gets outbound edges
to its K nearest neighbours (ties broken by node id).  Paths are searched on
the undirected version of that edge set.  A query asks for the nodes of a
shortest path between a (start, goal) pair at exactly ``path_length`` hops;
the target is the lexicographically smallest such path.

Token encoding: node ``i`` is token ``i + 1``; token 0 is padding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from memonet import kernels
from memonet.errors import ConfigError, GenerationError


@dataclass(frozen=True)
class GraphConfig:
    n_nodes: int = 10
    out_degree: int = 2
    path_length: int = 2
    degree_range: tuple | None = None  # (k_min, k_max) per-node draw, None keeps K fixed
    vocab: int = 1000
    max_retries: int = 100

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ConfigError("need at least two nodes")
        if not 1 <= self.out_degree < self.n_nodes:
            raise ConfigError(f"out_degree must be in [1, n_nodes), got {self.out_degree}")
        if self.path_length < 1:
            raise ConfigError("path_length must be >= 1")
        if self.n_nodes + 1 > self.vocab:
            raise ConfigError("vocabulary too small for node tokens")
        if self.degree_range is not None:
            lo, hi = self.degree_range
            if not 1 <= lo <= hi < self.n_nodes:
                raise ConfigError(f"bad degree range {self.degree_range}")

    @property
    def n_edges(self) -> int:
        """Memory rows: the maximum number of outbound edges."""
        hi = self.out_degree if self.degree_range is None else self.degree_range[1]
        return self.n_nodes * hi

    @property
    def n_answers(self) -> int:
        """Intermediate nodes on the path; the goal itself is given."""
        return self.path_length - 1 if self.path_length > 1 else 1


PRESETS = {
    "10-2-2": GraphConfig(10, 2, 2),
    "20-3-3": GraphConfig(20, 3, 3),
    "20-5-3": GraphConfig(20, 5, 3),
}


@dataclass
class Graph:
    points: np.ndarray  # (n, 2)
    edges: np.ndarray  # (M, 2) directed src -> dst
    indptr: np.ndarray  # undirected CSR, sorted neighbours
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    def neighbours(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n_nodes)


@dataclass
class GraphInstance:
    graph: Graph
    start: int
    goal: int
    path: tuple  # lexicographically smallest shortest path, start..goal


def knn_edges(points: np.ndarray, degrees) -> np.ndarray:
    n = len(points)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    edges = []
    for u in range(n):
        order = sorted((dist[u, v], v) for v in range(n) if v != u)
        edges.extend((u, v) for _, v in order[:int(degrees[u])])
    return np.asarray(edges, dtype=np.int64)


def undirected_csr(n: int, edges: np.ndarray):
    adj = [set() for _ in range(n)]
    for u, v in edges:
        adj[int(u)].add(int(v))
        adj[int(v)].add(int(u))
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adj])
    indices = np.asarray([v for a in adj for v in sorted(a)], dtype=np.int64)
    return indptr, indices


def random_graph(cfg: GraphConfig, rng: np.random.Generator) -> Graph:
    points = rng.uniform(size=(cfg.n_nodes, 2))
    if cfg.degree_range is None:
        degrees = np.full(cfg.n_nodes, cfg.out_degree)
    else:
        lo, hi = cfg.degree_range
        degrees = rng.integers(lo, hi + 1, size=cfg.n_nodes)
    edges = knn_edges(points, degrees)
    indptr, indices = undirected_csr(cfg.n_nodes, edges)
    return Graph(points, edges, indptr, indices)


def distance_matrix(g: Graph) -> np.ndarray:
    return np.stack([kernels.bfs_distances(g.indptr, g.indices, s) for s in range(g.n_nodes)])


def generate_instance(cfg: GraphConfig, rng: np.random.Generator) -> GraphInstance:
    """A graph plus a uniformly chosen pair at exactly ``path_length`` hops.

    Graphs without such a pair are redrawn; after ``max_retries`` draws a
    :class:`GenerationError` is raised.
    """
    for _ in range(cfg.max_retries):
        g = random_graph(cfg, rng)
        dist = distance_matrix(g)
        pairs = np.argwhere(dist == cfg.path_length)
        if len(pairs) == 0:
            continue
        s, t = (int(x) for x in pairs[int(rng.integers(len(pairs)))])
        path = tuple(int(x) for x in kernels.lex_shortest_path(g.indptr, g.indices, s, t))
        return GraphInstance(g, s, t, path)
    raise GenerationError(
        f"no pair at distance {cfg.path_length} in {cfg.max_retries} graphs "
        f"(n={cfg.n_nodes}, K={cfg.out_degree})")


def bfs_shortest_paths(g: Graph, start: int, goal: int) -> list[tuple]:
    """Every shortest path from ``start`` to ``goal``, in lexicographic order."""
    if start == goal:
        return [(start,)]
    to_goal = kernels.bfs_distances(g.indptr, g.indices, goal)
    if to_goal[start] < 0:
        return []
    out = []

    def walk(u, prefix):
        if u == goal:
            out.append(tuple(prefix))
            return
        for v in g.neighbours(u):
            if to_goal[v] == to_goal[u] - 1:
                walk(int(v), prefix + [int(v)])

    walk(start, [start])
    return out


# ---------------------------------------------------------------- encoding


def encode_instance(cfg: GraphConfig, inst: GraphInstance):
    """``(description (M, 2), query (2,), targets (A,))`` token arrays."""
    desc = np.zeros((cfg.n_edges, 2), dtype=np.int64)
    desc[:len(inst.graph.edges)] = inst.graph.edges + 1
    query = np.array([inst.start + 1, inst.goal + 1], dtype=np.int64)
    interior = inst.path[1:-1] if len(inst.path) > 2 else inst.path[-1:]
    return desc, query, np.asarray(interior, dtype=np.int64) + 1


def decode_description(desc: np.ndarray) -> list[tuple]:
    return [(int(a) - 1, int(b) - 1) for a, b in desc if a > 0 and b > 0]


@dataclass
class GraphBatch:
    description: np.ndarray  # (B, M, 2)
    query: np.ndarray  # (B, 2)
    targets: np.ndarray  # (B, A)
    instances: list

    def __len__(self):
        return len(self.query)


def sample_batch(cfg: GraphConfig, rng: np.random.Generator, batch_size: int) -> GraphBatch:
    insts = [generate_instance(cfg, rng) for _ in range(batch_size)]
    enc = [encode_instance(cfg, i) for i in insts]
    return GraphBatch(np.stack([e[0] for e in enc]), np.stack([e[1] for e in enc]),
                      np.stack([e[2] for e in enc]), insts)


def next_query(query: np.ndarray, chosen) -> np.ndarray:
    """Re-query from the chosen node toward the same goal."""
    q = np.array(query, copy=True)
    q[:, 0] = chosen
    return q


def evaluate_path_accuracy(predict, cfg: GraphConfig, rng: np.random.Generator,
                           n_items: int = 600, batch_size: int = 60) -> dict:
    """Per-node accuracy under ground-truth and predicted feeding.

    ``predict(description, query, feed)`` returns predicted node tokens
    ``(B, A)``; ``feed`` is the target tokens or ``None`` (feed own guesses).
    ``valid_path`` counts predicted-feeding outputs that form any shortest path.
    """
    A = cfg.n_answers
    hits = {"ground_truth": np.zeros(A), "predicted": np.zeros(A)}
    valid = 0
    n = 0
    while n < n_items:
        b = sample_batch(cfg, rng, min(batch_size, n_items - n))
        gt = np.asarray(predict(b.description, b.query, b.targets))
        own = np.asarray(predict(b.description, b.query, None))
        hits["ground_truth"] += (gt == b.targets).sum(0)
        hits["predicted"] += (own == b.targets).sum(0)
        for inst, row in zip(b.instances, own):
            if cfg.path_length > 1:
                cand = (inst.start, *[int(x) - 1 for x in row], inst.goal)
            else:
                cand = (inst.start, inst.goal)
            valid += cand in bfs_shortest_paths(inst.graph, inst.start, inst.goal)
        n += len(b)
    return {
        "n": n,
        "ground_truth": [float(h / n) for h in hits["ground_truth"]],
        "predicted": [float(h / n) for h in hits["predicted"]],
        "valid_path": float(valid / n),
    }
