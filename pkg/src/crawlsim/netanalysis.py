"""Graph measurements for the small-world / scale-free check, and the rewiring null model."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path

from crawlsim.errors import InsufficientDataError

Edge = tuple[int, int]


@dataclass(frozen=True)
class DegreeHistogram:
    direction: str
    counts: dict[int, int]

    @property
    def num_nodes(self) -> int:
        return sum(self.counts.values())

    def rows(self) -> list[tuple[int, int, float]]:
        """(degree, count, relative frequency) sorted by degree."""
        n = self.num_nodes
        return [(d, c, c / n) for d, c in sorted(self.counts.items())]


@dataclass(frozen=True)
class GraphStats:
    clustering: float
    avg_path_length: float
    exponent_in: float
    exponent_out: float


def _nodes(edges: Iterable[Edge], nodes: Iterable[int] | None = None) -> list[int]:
    found = set(nodes) if nodes is not None else set()
    for u, w in edges:
        found.add(u)
        found.add(w)
    return sorted(found)


def degree_histogram(edges: Sequence[Edge], direction: str, nodes: Iterable[int] | None = None) -> DegreeHistogram:
    """Exact degree counts; nodes with zero degree in ``direction`` are included.

    Nodes are those appearing in any edge, plus ``nodes`` if given (isolated pages).
    """
    if direction not in ("in", "out"):
        raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
    side = 0 if direction == "out" else 1
    deg = Counter(e[side] for e in edges)
    counts = Counter(deg.get(v, 0) for v in _nodes(edges, nodes))
    return DegreeHistogram(direction, dict(sorted(counts.items())))


def fit_power_law(hist: DegreeHistogram) -> float:
    """Least-squares slope of log relative frequency against log degree."""
    pts = [(d, c) for d, c in hist.counts.items() if d > 0 and c > 0]
    if len(pts) < 3:
        raise InsufficientDataError(f"need at least 3 distinct nonzero degrees, got {len(pts)}")
    n = hist.num_nodes
    x = np.log([d for d, _ in pts])
    y = np.log([c / n for _, c in pts])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def _undirected_adjacency(edges: Sequence[Edge]) -> tuple[sparse.csr_matrix, int]:
    nodes = _nodes(edges)
    if not nodes:
        return sparse.csr_matrix((0, 0)), 0
    index = {v: i for i, v in enumerate(nodes)}
    rows, cols = [], []
    for u, w in edges:
        if u == w:
            continue
        rows.append(index[u])
        cols.append(index[w])
    n = len(nodes)
    a = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a = ((a + a.T) > 0).astype(np.int64)
    return a, n


def clustering_coefficient(edges: Sequence[Edge]) -> float:
    """Watts-Strogatz average local clustering of the undirected projection.

    Self-loops and parallel edges are dropped.  Nodes with fewer than two
    neighbours contribute zero but still count in the average.
    """
    a, n = _undirected_adjacency(edges)
    if n == 0:
        return 0.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    pairs = deg * (deg - 1) / 2.0
    local = np.divide(tri, pairs, out=np.zeros(n), where=pairs > 0)
    return float(local.mean())


def avg_path_length(edges: Sequence[Edge], sample_size: int | None = None, rng_seed: int = 0) -> float:
    """Mean directed shortest-path length over reachable ordered pairs.

    BFS runs from ``sample_size`` uniformly drawn sources (all nodes when
    ``sample_size`` is None or at least the node count).
    """
    nodes = _nodes(edges)
    n = len(nodes)
    if n == 0:
        raise InsufficientDataError("empty graph")
    index = {v: i for i, v in enumerate(nodes)}
    pairs = {(index[u], index[w]) for u, w in edges if u != w}
    if not pairs:
        raise InsufficientDataError("no reachable pair")
    rows, cols = zip(*pairs)
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    if sample_size is None or sample_size >= n:
        sources = np.arange(n)
    else:
        rng = np.random.default_rng(rng_seed)
        sources = np.sort(rng.choice(n, size=sample_size, replace=False))
    total = 0.0
    count = 0
    for chunk in np.array_split(sources, max(1, math.ceil(len(sources) / 256))):
        d = shortest_path(g, directed=True, unweighted=True, indices=chunk)
        mask = np.isfinite(d) & (d > 0)
        total += d[mask].sum()
        count += int(mask.sum())
    if count == 0:
        raise InsufficientDataError("no reachable pair")
    return total / count


def rewire_edges(edges: Sequence[Edge], rng_seed: int, *, identity: bool = False) -> list[Edge]:
    """Re-pair edges by independent random permutations of origins and endpoints.

    Both degree sequences are preserved exactly; self-loops and duplicate
    edges can appear and are kept.  ``identity=True`` uses identity
    permutations and returns the edges unchanged.
    """
    origins = [u for u, _ in edges]
    ends = [w for _, w in edges]
    if identity:
        return list(zip(origins, ends))
    rng = np.random.default_rng(rng_seed)
    p_orig = rng.permutation(len(edges))
    p_end = rng.permutation(len(edges))
    return [(origins[i], ends[j]) for i, j in zip(p_orig, p_end)]


def graph_stats(edges: Sequence[Edge], sample_size: int | None = 500, rng_seed: int = 0) -> GraphStats:
    return GraphStats(
        clustering=clustering_coefficient(edges),
        avg_path_length=avg_path_length(edges, sample_size, rng_seed),
        exponent_in=fit_power_law(degree_histogram(edges, "in")),
        exponent_out=fit_power_law(degree_histogram(edges, "out")),
    )
