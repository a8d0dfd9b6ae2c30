"""Independent brute-force references used by the tests and ``relate3d check``.

Nothing here shares code paths with the implementations it checks: the
rasterizer never clips polygons, and the graph oracles scan all pairs.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import Box3D, bev_corners


# ---------------------------------------------------------------------------
# rasterized polygon / IoU oracle
# ---------------------------------------------------------------------------

def _scanline_interval(poly: np.ndarray, ys: np.ndarray):
    """For each horizontal line y, the [lo, hi] x-interval inside a convex polygon.

    Rows that miss the polygon get lo > hi.
    """
    lo = np.full(ys.shape, np.inf)
    hi = np.full(ys.shape, -np.inf)
    n = len(poly)
    for k in range(n):
        (x0, y0), (x1, y1) = poly[k], poly[(k + 1) % n]
        if y0 == y1:
            continue
        ylo, yhi = min(y0, y1), max(y0, y1)
        hit = (ys >= ylo) & (ys <= yhi)
        xs = x0 + (ys[hit] - y0) * (x1 - x0) / (y1 - y0)
        lo[hit] = np.minimum(lo[hit], xs)
        hi[hit] = np.maximum(hi[hit], xs)
    return lo, hi


def raster_intersection_area(a: np.ndarray, b: np.ndarray, cells: int = 2000) -> float:
    """Intersection area of two convex polygons by counting covered cell centers.

    The grid spans the overlap of both bounding rectangles with ``cells`` x
    ``cells`` cells; each row is resolved by scanline so the full grid is
    never materialized.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x0 = max(a[:, 0].min(), b[:, 0].min())
    x1 = min(a[:, 0].max(), b[:, 0].max())
    y0 = max(a[:, 1].min(), b[:, 1].min())
    y1 = min(a[:, 1].max(), b[:, 1].max())
    if x1 <= x0 or y1 <= y0:
        return 0.0
    dx = (x1 - x0) / cells
    dy = (y1 - y0) / cells
    ys = y0 + (np.arange(cells) + 0.5) * dy
    alo, ahi = _scanline_interval(a, ys)
    blo, bhi = _scanline_interval(b, ys)
    lo = np.maximum(alo, blo)
    hi = np.minimum(ahi, bhi)
    ok = hi >= lo
    # cell centers x0 + (i + 0.5) dx with lo <= center <= hi, i in [0, cells)
    first = np.ceil((lo[ok] - x0) / dx - 0.5)
    last = np.floor((hi[ok] - x0) / dx - 0.5)
    first = np.clip(first, 0, cells - 1)
    last = np.clip(last, 0, cells - 1)
    count = np.maximum(last - first + 1, 0).sum()
    return float(count) * dx * dy


def raster_iou_bev(a: Box3D, b: Box3D, cells: int = 2000) -> float:
    inter = raster_intersection_area(bev_corners(a), bev_corners(b), cells)
    return inter / (a.w * a.l + b.w * b.l - inter)


# ---------------------------------------------------------------------------
# brute-force graphs
# ---------------------------------------------------------------------------

def pairwise_distances(centers) -> np.ndarray:
    c = np.asarray(centers, dtype=float).reshape(-1, 3)
    diff = c[None, :, :] - c[:, None, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def brute_force_knn(centers, k: int, dist=None) -> list[list[int]]:
    """Full O(n^2) distance matrix, sorted by (distance, index) per row.

    ``dist`` may pass a precomputed :func:`pairwise_distances` result.
    """
    dist = pairwise_distances(centers) if dist is None else dist.copy()
    n = len(dist)
    np.fill_diagonal(dist, np.inf)
    index = np.broadcast_to(np.arange(n), dist.shape)
    order = np.lexsort((index, dist), axis=-1)[:, :min(k, max(n - 1, 0))]
    return [sorted(row.tolist()) for row in order]


def brute_force_radius(centers, r: float, dist=None) -> list[list[int]]:
    dist = pairwise_distances(centers) if dist is None else dist.copy()
    np.fill_diagonal(dist, np.inf)
    return [np.flatnonzero(row <= r).tolist() for row in dist]


def max_pool_loop(rows: np.ndarray, groups) -> np.ndarray:
    """Per-column max over each group with plain Python loops."""
    rows = np.asarray(rows, dtype=float)
    out = np.empty((len(groups), rows.shape[1]))
    for g, members in enumerate(groups):
        for c in range(rows.shape[1]):
            best = -math.inf
            for r in members:
                if rows[r, c] > best:
                    best = rows[r, c]
            out[g, c] = best
    return out
