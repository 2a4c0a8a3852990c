"""Exact k-nearest-neighbour search over grid rows.

Candidates come from a k-d tree, or from a sorted sweep when the grid varies
in a single coordinate (the augmented one-factor grids of both templates).
The final order is always decided by this module's own squared distances
with ties broken by ascending row index, and queries whose k-th and
(k+1)-th distances are too close to separate fall back to a full sort.
Row indices are 0-based.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .model import Grid

_TIE_RTOL = 1e-9
_CHUNK = 65536


def squared_distances(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``points`` (..., d) against ``rows`` (..., d), summed in coordinate order."""
    diff = points[..., 0] - rows[..., 0]
    out = diff * diff
    for c in range(1, points.shape[-1]):
        diff = points[..., c] - rows[..., c]
        out = out + diff * diff
    return out


class NeighborIndex:
    def __init__(self, points):
        self.points = np.array(points, dtype=float)
        self.points.setflags(write=False)
        varying = np.flatnonzero(np.ptp(self.points, axis=0) > 0)
        self._axis = int(varying[0]) if varying.size == 1 else None
        if self._axis is not None:
            self._order = np.argsort(self.points[:, self._axis], kind="stable")
            self._sorted = self.points[self._order, self._axis]
            self._tree = None
        else:
            self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def knn(self, points, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and squared distances of the ``k`` nearest rows, shape ``(n, k)``."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None]
        k = int(k)
        if not 1 <= k <= self.m:
            raise ValueError(f"k must lie in 1..{self.m}, got {k}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("query points must be finite")
        idx = np.empty((pts.shape[0], k), dtype=np.int64)
        dist = np.empty((pts.shape[0], k))
        for lo in range(0, pts.shape[0], _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            idx[sl], dist[sl] = self._knn_block(pts[sl], k)
        return idx, dist

    def _full_sort(self, pts, k):
        d2 = squared_distances(pts[:, None, :], self.points[None, :, :])
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return order, np.take_along_axis(d2, order, axis=1)

    def _knn_block(self, pts, k):
        if k == self.m or self.m <= k + 1:
            return self._full_sort(pts, k)
        if self._tree is None:
            cand = self._sweep(pts[:, self._axis], k + 1)
        else:
            _, cand = self._tree.query(pts, k=k + 1)
            cand = np.asarray(cand, dtype=np.int64).reshape(pts.shape[0], k + 1)
        d2 = squared_distances(pts[:, None, :], self.points[cand])
        # rows already strictly increasing in our own metric need no re-sort
        unsorted = np.flatnonzero(np.any(d2[:, 1:] <= d2[:, :-1], axis=1))
        if unsorted.size:
            sub_c, sub_d = cand[unsorted], d2[unsorted]
            order = np.lexsort((sub_c, sub_d), axis=-1)
            cand[unsorted] = np.take_along_axis(sub_c, order, axis=1)
            d2[unsorted] = np.take_along_axis(sub_d, order, axis=1)
        # the k-th/(k+1)-th boundary is not resolvable from the tree's candidates
        ambiguous = d2[:, k - 1] >= d2[:, k] * (1.0 - _TIE_RTOL)
        idx, dist = cand[:, :k].copy(), d2[:, :k].copy()
        if np.any(ambiguous):
            rows = np.flatnonzero(ambiguous)
            idx[rows], dist[rows] = self._full_sort(pts[rows], k)
        return idx, dist

    def _sweep(self, x, count):
        # merge outwards from the insertion point; ties are settled by the caller
        xs, m = self._sorted, self.m
        right = np.searchsorted(xs, x)
        left = right - 1
        out = np.empty((x.size, count), dtype=np.int64)
        for j in range(count):
            dl = np.where(left >= 0, x - xs[np.maximum(left, 0)], np.inf)
            dr = np.where(right < m, xs[np.minimum(right, m - 1)] - x, np.inf)
            take_left = dl < dr
            out[:, j] = np.where(take_left, self._order[np.maximum(left, 0)],
                                 self._order[np.minimum(right, m - 1)])
            left = left - take_left
            right = right + ~take_left
        return out

    def query(self, point, k: int) -> list[tuple[int, float]]:
        idx, dist = self.knn(np.asarray(point, dtype=float)[None], k)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def build_index(grid: Grid) -> NeighborIndex:
    return NeighborIndex(grid.points)


def query_knn(index: NeighborIndex, point, k: int) -> list[tuple[int, float]]:
    """The ``k`` grid rows nearest to ``point`` as ``(row, squared distance)`` pairs."""
    return index.query(point, k)
