"""KD-tree over sphere centers for neighbor queries.

The tree itself is scipy's ``cKDTree`` built with median splits on the
widest-spread axis. This wrapper fixes the query semantics: exact
Euclidean distances computed here, inclusive radius test, and results
ordered by ``(distance, id)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

# cKDTree prunes with its own rounding; widen the search a hair, then filter exactly.
_SLACK = 1e-9


class SpatialIndex:
    """Immutable index over ``(center, id)`` pairs; ids are input positions."""

    def __init__(self, centers: np.ndarray | Sequence[Sequence[float]], dim: int | None = None):
        pts = np.array(centers, dtype=float)
        if pts.size == 0:
            if dim is None:
                dim = pts.shape[1] if pts.ndim == 2 else 0
            pts = np.empty((0, dim))
        if pts.ndim != 2:
            raise ValueError("centers must be a 2-D array of shape (N, D)")
        self.points = pts
        self.points.setflags(write=False)
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _ordered(self, ids: np.ndarray, q: np.ndarray) -> list[tuple[int, float]]:
        dist = np.sqrt(((self.points[ids] - q) ** 2).sum(axis=1))
        order = np.lexsort((ids, dist))
        return [(int(ids[j]), float(dist[j])) for j in order]

    def within_radius(self, q, rho: float) -> list[tuple[int, float]]:
        """All stored points with ``||p - q|| <= rho``, sorted by (distance, id)."""
        if rho < 0:
            raise ValueError("rho must be non-negative")
        if self._tree is None:
            return []
        q = np.asarray(q, dtype=float)
        ids = np.asarray(self._tree.query_ball_point(q, rho * (1 + _SLACK) + _SLACK), dtype=np.intp)
        if ids.size == 0:
            return []
        out = self._ordered(ids, q)
        return [(i, d) for i, d in out if d <= rho]

    def nearest_k(self, q, k: int) -> list[tuple[int, float]]:
        """The ``k`` closest points (all of them if fewer), sorted by (distance, id)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if self._tree is None:
            return []
        q = np.asarray(q, dtype=float)
        k = min(k, len(self))
        dist, ids = self._tree.query(q, k=k)
        ids = np.atleast_1d(ids)
        # Pull in every point tied with the k-th distance so the id tie-break is exact.
        cutoff = float(np.max(dist))
        ids = np.asarray(self._tree.query_ball_point(q, cutoff * (1 + _SLACK) + _SLACK), dtype=np.intp)
        return self._ordered(ids, q)[:k]

    def ball_lists(self, queries: np.ndarray, rho: float) -> list[list[int]]:
        """Unsorted candidate ids within ``rho`` of each query row (vectorized path)."""
        if self._tree is None:
            return [[] for _ in range(len(queries))]
        return self._tree.query_ball_point(np.asarray(queries, dtype=float), rho * (1 + _SLACK) + _SLACK)

    def pairs_within(self, queries: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All ``(query row, id, distance)`` triples with distance <= rho, as arrays."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if self._tree is None or len(queries) == 0:
            empty = np.empty(0, dtype=np.intp)
            return empty, empty, np.empty(0)
        pairs = cKDTree(queries).sparse_distance_matrix(
            self._tree, rho * (1 + _SLACK) + _SLACK, output_type="ndarray"
        )
        qi = pairs["i"].astype(np.intp)
        ids = pairs["j"].astype(np.intp)
        dist = np.sqrt(((queries[qi] - self.points[ids]) ** 2).sum(axis=1))
        keep = dist <= rho
        return qi[keep], ids[keep], dist[keep]

    def knn_arrays(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized k-NN returning ``(dist, ids)`` arrays of shape (M, k); missing slots are inf / N."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if self._tree is None:
            return np.full((len(queries), k), np.inf), np.full((len(queries), k), 0, dtype=np.intp)
        dist, ids = self._tree.query(queries, k=k)
        if k == 1:
            dist, ids = dist[:, None], ids[:, None]
        return dist, ids


def build(centers) -> SpatialIndex:
    return SpatialIndex(centers)

