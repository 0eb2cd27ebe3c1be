"""Site-based population graphs and their Laplacians."""

from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .sparse import SparseMatrix


def same_site(labels):
    """Default similarity predicate: connect subjects from the same site.

    A predicate takes the label sequence and returns (src, dst) index arrays
    with src < dst for every undirected edge.
    """
    codes = _codes(labels)
    src, dst = [], []
    for c in np.unique(codes):
        members = np.flatnonzero(codes == c)
        if members.size < 2:
            continue
        i, j = np.triu_indices(members.size, k=1)
        src.append(members[i])
        dst.append(members[j])
    if not src:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)


def _codes(labels):
    # map categories to first-appearance codes so any hashable label works
    lookup = {}
    return np.array([lookup.setdefault(lab, len(lookup)) for lab in labels], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PopulationGraph:
    """Undirected graph stored as a bidirectional (2, E) edge index."""

    n_nodes: int
    edge_index: np.ndarray
    site_labels: tuple

    def __post_init__(self):
        ei = np.asarray(self.edge_index, dtype=np.int64).reshape(2, -1)
        if ei.size:
            if ei.min() < 0 or ei.max() >= self.n_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(ei[0] == ei[1]):
                raise ValueError("self-loops are not allowed in edge_index")
            fwd = set(zip(ei[0].tolist(), ei[1].tolist()))
            if any((b, a) not in fwd for a, b in fwd):
                raise ValueError("edge_index must contain both orientations of every edge")
        ei.setflags(write=False)
        object.__setattr__(self, "edge_index", ei)
        object.__setattr__(self, "site_labels", tuple(self.site_labels))

    @property
    def n_edges(self):
        """Undirected edge count."""
        return self.edge_index.shape[1] // 2

    @cached_property
    def _adjacency(self):
        n = self.n_nodes
        src, dst = self.edge_index
        return SparseMatrix.from_coo(src, dst, np.ones(src.size), (n, n))

    def adjacency(self):
        return self._adjacency

    def attention_pattern(self):
        """CSR structure of N(i) plus i for every node (self term included)."""
        return self._attention_pattern

    @cached_property
    def _attention_pattern(self):
        n = self.n_nodes
        diag = np.arange(n)
        src = np.concatenate([self.edge_index[0], diag])
        dst = np.concatenate([self.edge_index[1], diag])
        return SparseMatrix.from_coo(src, dst, np.ones(src.size), (n, n))

    def degrees(self):
        return np.bincount(self.edge_index[0], minlength=self.n_nodes)

    def neighbors(self, i):
        adj = self.adjacency()
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def permuted(self, perm):
        """Graph with node ``perm[k]`` relabelled as node ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return PopulationGraph(self.n_nodes, inv[self.edge_index],
                               tuple(self.site_labels[p] for p in perm))

    def connected_components(self):
        adj = self.adjacency()
        label = -np.ones(self.n_nodes, dtype=np.int64)
        count = 0
        for start in range(self.n_nodes):
            if label[start] >= 0:
                continue
            label[start] = count
            queue = deque([start])
            while queue:
                u = queue.popleft()
                for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                    if label[v] < 0:
                        label[v] = count
                        queue.append(v)
            count += 1
        return count, label


@dataclass(frozen=True, eq=False)
class ScaledLaplacian:
    matrix: SparseMatrix
    lambda_max: float

    @property
    def n(self):
        return self.matrix.shape[0]


def build_population_graph(site_labels, predicate=same_site):
    """Connect i != j whenever ``predicate`` says so (same site by default)."""
    site_labels = list(site_labels)
    if not site_labels:
        raise ValueError("cannot build a population graph from zero subjects")
    src, dst = predicate(site_labels)
    edge_index = np.stack([np.concatenate([src, dst]), np.concatenate([dst, src])])
    return PopulationGraph(len(site_labels), edge_index, tuple(site_labels))


def graph_from_edges(n_nodes, edges):
    """Build a graph from an iterable of undirected (i, j) pairs (test helper)."""
    pairs = {(min(i, j), max(i, j)) for i, j in edges if i != j}
    if pairs:
        src, dst = np.array(sorted(pairs), dtype=np.int64).T
    else:
        src = dst = np.empty(0, np.int64)
    ei = np.stack([np.concatenate([src, dst]), np.concatenate([dst, src])])
    return PopulationGraph(n_nodes, ei, tuple(range(n_nodes)))


def normalized_laplacian(g):
    """L = I - D^-1/2 A D^-1/2; isolated nodes get a unit diagonal."""
    n = g.n_nodes
    deg = g.degrees().astype(np.float64)
    d_inv_sqrt = np.zeros(n)
    d_inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    src, dst = g.edge_index
    vals = -d_inv_sqrt[src] * d_inv_sqrt[dst]
    diag = np.arange(n)
    return SparseMatrix.from_coo(np.concatenate([src, diag]), np.concatenate([dst, diag]),
                                 np.concatenate([vals, np.ones(n)]), (n, n))


def largest_eigenvalue(l, iters=1000, tol=1e-12, seed=0):
    """Power iteration estimate of the largest eigenvalue of a symmetric PSD matrix."""
    n = l.shape[0]
    v = np.random.default_rng(seed).standard_normal((n, 1))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = l.dot(v)
        new = float((v * w).sum())
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def scaled_laplacian(l, lambda_max=2.0):
    """L~ = (2 / lambda_max) L - I, mapping the spectrum into [-1, 1]."""
    if lambda_max == "exact":
        lambda_max = largest_eigenvalue(l)
    lambda_max = float(lambda_max)
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    return ScaledLaplacian(l.scaled(2.0 / lambda_max, -1.0), lambda_max)


def hop_distance(g, i, j):
    """BFS hop count between i and j, or None when unreachable."""
    n = g.n_nodes
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node out of range for a graph with {n} nodes")
    if i == j:
        return 0
    adj = g.adjacency()
    dist = {i: 0}
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                if v == j:
                    return dist[v]
                queue.append(v)
    return None
