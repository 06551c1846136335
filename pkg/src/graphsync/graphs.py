"""Finite graphs for the experiments: tori/boxes, configuration-model
random regular graphs, and truncated regular trees.

Edges are directed ordered pairs; the direction is fixed by construction
order (positive axis for tori, parent to child for trees, matching order
for the configuration model).  Observation kernels are functions of the
ordered pair, so generators document and freeze their direction choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._rng import make_rng

MAX_VERTICES = 1 << 26


class GraphError(ValueError):
    pass


@dataclass(eq=False)
class Graph:
    """Directed-edge graph with CSR adjacency.

    ``adjacency[v]`` lists ``(neighbor, edge_index, is_head)`` triples where
    ``is_head`` is 0 when ``v`` is the tail (source) of the edge and 1 when
    it is the head.
    """

    n: int
    edges: np.ndarray  # (E, 2) int64
    simple: bool = True
    _csr: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        self.edges = np.ascontiguousarray(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise GraphError("edge endpoint out of range")

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(offsets, neighbors, edge_ids, is_head) with incidences sorted by
        (vertex, edge index) so traversal order is deterministic."""
        if self._csr is None:
            e = self.edges
            m = e.shape[0]
            verts = np.concatenate([e[:, 0], e[:, 1]])
            nbrs = np.concatenate([e[:, 1], e[:, 0]])
            eids = np.concatenate([np.arange(m), np.arange(m)])
            head = np.concatenate([np.zeros(m, dtype=np.int8), np.ones(m, dtype=np.int8)])
            order = np.lexsort((eids, verts))
            offsets = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(offsets, verts + 1, 1)
            np.cumsum(offsets, out=offsets)
            self._csr = (offsets, nbrs[order], eids[order], head[order])
        return self._csr

    @property
    def adjacency(self) -> list[list[tuple[int, int, int]]]:
        offsets, nbrs, eids, head = self.csr()
        return [
            [(int(nbrs[i]), int(eids[i]), int(head[i])) for i in range(offsets[v], offsets[v + 1])]
            for v in range(self.n)
        ]

    def degrees(self) -> np.ndarray:
        offsets = self.csr()[0]
        return np.diff(offsets)

    def neighbors(self, v: int) -> np.ndarray:
        offsets, nbrs, _, _ = self.csr()
        return nbrs[offsets[v]:offsets[v + 1]]

    def is_simple(self) -> bool:
        e = self.edges
        if e.shape[0] == 0:
            return True
        if np.any(e[:, 0] == e[:, 1]):
            return False
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        pairs = lo * self.n + hi
        return np.unique(pairs).size == pairs.size

    def validate(self) -> None:
        """Check the structural invariants; raises GraphError on violation."""
        offsets, nbrs, eids, head = self.csr()
        if offsets[-1] != 2 * self.num_edges:
            raise GraphError("adjacency inconsistent with edge list")
        for v in range(self.n):
            for i in range(offsets[v], offsets[v + 1]):
                u, w = self.edges[eids[i]]
                if head[i] == 0 and not (u == v and w == nbrs[i]):
                    raise GraphError("tail incidence mismatch")
                if head[i] == 1 and not (w == v and u == nbrs[i]):
                    raise GraphError("head incidence mismatch")
        if self.simple and not self.is_simple():
            raise GraphError("graph flagged simple but is not")

    def bfs_distances(self, source: int) -> np.ndarray:
        offsets, nbrs, _, _ = self.csr()
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[source] = 0
        frontier = [source]
        d = 0
        while frontier:
            nxt = []
            for v in frontier:
                for i in range(offsets[v], offsets[v + 1]):
                    w = int(nbrs[i])
                    if dist[w] < 0:
                        dist[w] = d + 1
                        nxt.append(w)
            frontier = nxt
            d += 1
        return dist

    def is_tree(self) -> bool:
        return self.num_edges == self.n - 1 and np.all(self.bfs_distances(0) >= 0)


@dataclass(eq=False)
class Ball:
    """Radius-l neighborhood of a center vertex with a re-indexed subgraph."""

    center: int
    radius: int
    vertices: np.ndarray          # original ids, ordered by (BFS distance, discovery)
    subgraph: Graph
    index_map: dict[int, int]     # original id -> local id; center maps to 0
    edge_ids: np.ndarray          # parent edge ids kept, in parent order


def gen_torus(d: int, L: int) -> Graph:
    """d-dimensional torus Z_L^d; every vertex has degree 2d.

    Vertex id is the C-order ravel of the coordinate tuple; per axis each
    vertex sends one edge to its positive neighbor.
    """
    return _grid(d, L, periodic=True)


def gen_box(d: int, L: int) -> Graph:
    """Open L^d box in the d-dimensional grid (no wrap-around edges)."""
    return _grid(d, L, periodic=False)


def _grid(d: int, L: int, periodic: bool) -> Graph:
    if d < 1:
        raise GraphError("dimension must be >= 1")
    if periodic and L < 3:
        raise GraphError("torus needs L >= 3 (L=2 would create multi-edges)")
    if not periodic and L < 2:
        raise GraphError("box needs L >= 2")
    if d * np.log2(L) > np.log2(MAX_VERTICES):
        raise GraphError(f"L**d exceeds the vertex cap {MAX_VERTICES}")
    n = L**d
    ids = np.arange(n)
    coords = np.empty((n, d), dtype=np.int64)
    rem = ids.copy()
    for axis in range(d - 1, -1, -1):
        coords[:, axis] = rem % L
        rem //= L
    strides = L ** np.arange(d - 1, -1, -1, dtype=np.int64)
    edges = []
    for axis in range(d):
        shifted = coords.copy()
        shifted[:, axis] = (coords[:, axis] + 1) % L
        targets = shifted @ strides
        if periodic:
            edges.append(np.stack([ids, targets], axis=1))
        else:
            keep = coords[:, axis] + 1 < L
            edges.append(np.stack([ids[keep], targets[keep]], axis=1))
    return Graph(n=n, edges=np.concatenate(edges, axis=0), simple=True)


def gen_random_regular(
    n: int,
    k: int,
    seed: int,
    require_simple: bool = True,
    max_attempts: int = 10_000,
) -> Graph:
    """Configuration-model k-regular (multi)graph on n vertices.

    A uniformly random perfect matching of the n*k half-edges is drawn;
    half-edge h belongs to vertex h mod n.  With ``require_simple`` the draw
    is rejected until the multigraph has no self-loops or repeated pairs,
    which keeps the conditional law uniform over simple k-regular graphs.
    """
    if (n * k) % 2 != 0:
        raise GraphError("n*k must be even")
    if k < 3:
        raise GraphError("degree must be >= 3")
    if n <= k:
        raise GraphError("need n > k")
    rng = make_rng(seed, 0x6772)
    half = n * k
    for attempt in range(1, max_attempts + 1):
        perm = rng.permutation(half)
        edges = np.stack([perm[0::2] % n, perm[1::2] % n], axis=1)
        g = Graph(n=n, edges=edges, simple=False)
        if not require_simple:
            return g
        if g.is_simple():
            g.simple = True
            return g
    rate = 1.0 / (max_attempts + 1)
    raise GraphError(
        f"no simple graph in {max_attempts} attempts "
        f"(acceptance rate < {rate:.2e}); raise max_attempts"
    )


def gen_tree(k: int, depth: int, max_vertices: int = MAX_VERTICES) -> Graph:
    """Truncated k-regular tree: root (id 0) has k children, every other
    internal vertex has k-1 children.  Edges are directed parent -> child."""
    if k < 2:
        raise GraphError("degree must be >= 2")
    return _tree([k] + [k - 1] * max(depth - 1, 0), depth, max_vertices)


def gen_ary_tree(branching: int, depth: int, max_vertices: int = MAX_VERTICES) -> Graph:
    """Truncated pure (k-1)-ary tree: every internal vertex, root included,
    has ``branching`` children."""
    if branching < 1:
        raise GraphError("branching must be >= 1")
    return _tree([branching] * depth, depth, max_vertices)


def _tree(children_per_level: Sequence[int], depth: int, max_vertices: int) -> Graph:
    if depth < 0:
        raise GraphError("depth must be >= 0")
    sizes = [1]
    for lvl in range(depth):
        sizes.append(sizes[-1] * children_per_level[lvl])
    n = sum(sizes)
    if n > max_vertices:
        raise GraphError(f"tree would have {n} vertices, above the cap {max_vertices}")
    edges = []
    next_id = 1
    level_start = 0
    for lvl in range(depth):
        width = sizes[lvl]
        c = children_per_level[lvl]
        parents = np.repeat(np.arange(level_start, level_start + width), c)
        kids = np.arange(next_id, next_id + width * c)
        edges.append(np.stack([parents, kids], axis=1))
        level_start += width
        next_id += width * c
    edge_arr = np.concatenate(edges, axis=0) if edges else np.empty((0, 2), dtype=np.int64)
    return Graph(n=n, edges=edge_arr, simple=True)


def ball(g: Graph, u: int, l: int) -> Ball:
    """BFS ball of radius l around u with the induced, re-indexed subgraph.

    Vertices are ordered by BFS distance with adjacency-order tie-breaking,
    so the center gets local id 0 and enumeration is reproducible.
    """
    if not 0 <= u < g.n:
        raise GraphError("center out of range")
    offsets, nbrs, _, _ = g.csr()
    dist = {u: 0}
    order = [u]
    frontier = [u]
    d = 0
    while frontier and d < l:
        nxt = []
        for v in frontier:
            for i in range(offsets[v], offsets[v + 1]):
                w = int(nbrs[i])
                if w not in dist:
                    dist[w] = d + 1
                    order.append(w)
                    nxt.append(w)
        frontier = nxt
        d += 1
    index_map = {orig: local for local, orig in enumerate(order)}
    inside = np.zeros(g.n, dtype=bool)
    local_of = np.zeros(g.n, dtype=np.int64)
    for local, orig in enumerate(order):
        inside[orig] = True
        local_of[orig] = local
    keep = inside[g.edges[:, 0]] & inside[g.edges[:, 1]] if g.num_edges else np.zeros(0, bool)
    edge_ids = np.flatnonzero(keep)
    sub_edges = local_of[g.edges[edge_ids]].reshape(-1, 2)
    sub = Graph(n=len(order), edges=sub_edges, simple=g.simple)
    return Ball(
        center=u,
        radius=l,
        vertices=np.asarray(order, dtype=np.int64),
        subgraph=sub,
        index_map=index_map,
        edge_ids=edge_ids,
    )


def boundary(g: Graph, S: Iterable[int]) -> set[int]:
    """Inner vertex boundary: members of S with at least one neighbor
    outside S."""
    sset = set(int(v) for v in S)
    out = set()
    for v in sset:
        for w in g.neighbors(v):
            if int(w) not in sset:
                out.add(v)
                break
    return out


def write_graph(g: Graph, path) -> None:
    """Line-oriented text format: 'n m' header then one 'u v' per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.n} {g.num_edges}\n")
        for u, v in g.edges:
            fh.write(f"{int(u)} {int(v)}\n")


def read_graph(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        n, m = int(header[0]), int(header[1])
        edges = np.asarray(
            [[int(tok) for tok in fh.readline().split()] for _ in range(m)], dtype=np.int64
        ).reshape(-1, 2)
    g = Graph(n=n, edges=edges, simple=False)
    g.simple = g.is_simple()
    return g
