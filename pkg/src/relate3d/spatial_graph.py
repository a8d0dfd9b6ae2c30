"""Directed relation graphs over proposal box centers (KNN or radius)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# widen kd-tree candidate searches so float noise in the tree never drops a point;
# the final membership test is always done on exactly recomputed distances
_SLACK = 1e-9


@dataclass(frozen=True)
class GraphStrategy:
    kind: str = "knn"
    k: int = 16
    r: float = 6.0

    def __post_init__(self):
        if self.kind not in ("knn", "radius"):
            raise ValueError(f"unknown graph strategy {self.kind!r}")
        if self.kind == "knn" and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind == "radius" and not self.r > 0:
            raise ValueError("r must be > 0")

    def build(self, centers) -> "RelationGraph":
        if self.kind == "knn":
            return knn_graph(centers, self.k)
        return radius_graph(centers, self.r)


@dataclass(frozen=True)
class RelationGraph:
    num_nodes: int
    neighbors: tuple

    def __post_init__(self):
        nbrs = tuple(tuple(map(int, row)) for row in self.neighbors)
        if len(nbrs) != self.num_nodes:
            raise ValueError(f"expected {self.num_nodes} neighbor lists, got {len(nbrs)}")
        lengths = [len(row) for row in nbrs]
        cols = np.fromiter((j for row in nbrs for j in row), dtype=np.int64, count=sum(lengths))
        rows = np.repeat(np.arange(self.num_nodes), lengths)
        bad = np.flatnonzero((cols < 0) | (cols >= self.num_nodes))
        if bad.size:
            raise ValueError(f"neighbor index {cols[bad[0]]} out of range at node {rows[bad[0]]}")
        loops = np.flatnonzero(cols == rows)
        if loops.size:
            raise ValueError(f"self-loop at node {rows[loops[0]]}")
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, row in enumerate(self.neighbors) for j in row]

    @property
    def num_edges(self) -> int:
        return sum(len(row) for row in self.neighbors)

    def degrees(self) -> np.ndarray:
        return np.array([len(row) for row in self.neighbors], dtype=int)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(receivers, senders) in stored neighbor order, grouped by receiver."""
        recv = np.array([i for i, row in enumerate(self.neighbors) for _ in row], dtype=int)
        send = np.array([j for row in self.neighbors for j in row], dtype=int)
        return recv, send

    def canonical(self) -> "RelationGraph":
        return RelationGraph(self.num_nodes, tuple(tuple(sorted(row)) for row in self.neighbors))

    def permute(self, perm) -> "RelationGraph":
        """Relabel nodes so that new node ``p`` is old node ``perm[p]``."""
        perm = np.asarray(perm, dtype=int)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        rows = [sorted(int(inverse[j]) for j in self.neighbors[old]) for old in perm]
        return RelationGraph(self.num_nodes, tuple(tuple(r) for r in rows))

    def is_symmetric(self) -> bool:
        edges = set(self.edges)
        return all((j, i) in edges for i, j in edges)

    def to_json(self) -> dict:
        return {"num_nodes": self.num_nodes, "neighbors": [list(row) for row in self.neighbors]}

    @classmethod
    def from_json(cls, obj) -> "RelationGraph":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(int(obj["num_nodes"]), tuple(tuple(row) for row in obj["neighbors"]))

    @classmethod
    def empty(cls, n: int) -> "RelationGraph":
        return cls(n, tuple(() for _ in range(n)))


def _as_centers(centers) -> np.ndarray:
    c = np.asarray(centers, dtype=float)
    if c.size == 0:
        return np.zeros((0, 3))
    c = c.reshape(-1, 3)
    if not np.all(np.isfinite(c)):
        raise ValueError("centers must be finite")
    return c


def _distances_from(centers: np.ndarray, i: int, js) -> np.ndarray:
    diff = centers[js] - centers[i]
    return np.sqrt((diff ** 2).sum(axis=-1))


class SpatialIndex:
    """kd-tree over 3D centers with exact, tie-stable neighbor queries."""

    def __init__(self, centers):
        self.centers = _as_centers(centers)
        self._tree = cKDTree(self.centers) if len(self.centers) else None

    def __len__(self):
        return len(self.centers)

    def knn(self, i: int, k: int) -> list[int]:
        """The ``k`` nearest other points to point ``i``, ties to lower index.

        Returned sorted by (distance, index).
        """
        n = len(self.centers)
        k = min(k, n - 1)
        if k <= 0:
            return []
        d, _ = self._tree.query(self.centers[i], k=k + 1)
        reach = float(np.max(d)) * (1.0 + _SLACK) + _SLACK
        cand = [j for j in self._tree.query_ball_point(self.centers[i], reach) if j != i]
        dist = _distances_from(self.centers, i, cand)
        order = np.lexsort((np.asarray(cand), dist))
        return [int(cand[o]) for o in order[:k]]

    def within(self, i: int, r: float) -> list[int]:
        """All other points at distance <= r from point ``i``, ascending index."""
        if len(self.centers) == 0:
            return []
        cand = [j for j in self._tree.query_ball_point(self.centers[i], r * (1.0 + _SLACK) + _SLACK)
                if j != i]
        if not cand:
            return []
        cand = np.sort(np.asarray(cand))
        dist = _distances_from(self.centers, i, cand)
        return [int(j) for j in cand[dist <= r]]


    def knn_all(self, k: int) -> list[list[int]]:
        """:meth:`knn` for every point, with batched tree queries."""
        n = len(self.centers)
        k = min(k, n - 1)
        if k <= 0:
            return [[] for _ in range(n)]
        m = min(n, k + 9)
        d_tree, cand = self._tree.query(self.centers, k=m)
        cand = cand.reshape(n, m)
        diff = self.centers[cand] - self.centers[:, None, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        dist[cand == np.arange(n)[:, None]] = np.inf
        order = np.lexsort((cand, dist), axis=-1)[:, :k]
        rows = np.take_along_axis(cand, order, axis=1)
        kth = np.take_along_axis(dist, order[:, -1:], axis=1)[:, 0]
        # rows whose candidate window may have cut off a tie fall back to the exact path
        complete = (m == n) | (d_tree.reshape(n, m)[:, -1] > kth * (1.0 + _SLACK) + _SLACK)
        return [rows[i].tolist() if complete[i] else self.knn(i, k) for i in range(n)]

    def within_all(self, r: float) -> list[list[int]]:
        """:meth:`within` for every point, with one batched tree query."""
        n = len(self.centers)
        if n == 0:
            return []
        hits = self._tree.query_ball_point(self.centers, r * (1.0 + _SLACK) + _SLACK)
        counts = np.array([len(h) for h in hits])
        cols = np.concatenate([np.asarray(h, dtype=int) for h in hits])
        rows = np.repeat(np.arange(n), counts)
        diff = self.centers[cols] - self.centers[rows]
        keep = (cols != rows) & (np.sqrt((diff ** 2).sum(axis=-1)) <= r)
        rows, cols = rows[keep], cols[keep]
        order = np.lexsort((cols, rows))
        bounds = np.cumsum(np.bincount(rows, minlength=n))[:-1]
        return [c.tolist() for c in np.split(cols[order], bounds)]


def build_spatial_index(centers) -> SpatialIndex:
    return SpatialIndex(centers)


def knn_graph(centers, k: int) -> RelationGraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    index = SpatialIndex(centers)
    rows = tuple(tuple(sorted(row)) for row in index.knn_all(k))
    return RelationGraph(len(index), rows)


def radius_graph(centers, r: float) -> RelationGraph:
    if not r > 0:
        raise ValueError("r must be > 0")
    index = SpatialIndex(centers)
    rows = tuple(tuple(row) for row in index.within_all(r))
    return RelationGraph(len(index), rows)


def graph_degree_stats(g: RelationGraph) -> dict:
    deg = g.degrees()
    if deg.size == 0:
        return {"min": 0, "max": 0, "mean": 0.0}
    return {"min": int(deg.min()), "max": int(deg.max()), "mean": float(deg.mean())}
