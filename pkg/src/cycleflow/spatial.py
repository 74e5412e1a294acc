"""Exact nearest-neighbor and radius-count queries over one point cloud.

The KD-tree from scipy proposes candidates; every answer is then re-decided
with the same squared-distance expression a linear scan uses, so results are
bit-identical to brute force, ties going to the lowest point index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import ContractError, PointCloud

# candidate slack for the tree's own distance arithmetic
_REL_SLACK = 1e-9
_ABS_SLACK = 1e-12


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Canonical squared Euclidean distance, shared by the index and its oracles."""
    d = points - query
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


class NeighborIndex:
    """Immutable spatial index over the positions of a single cloud."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ContractError("cannot index an empty cloud")
        if not cloud.is_finite():
            raise ContractError("cannot index a cloud with non-finite positions")
        self.cloud = cloud
        self.points = cloud.positions
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :func:`nearest`. Returns ``(indices, squared_distances)``."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(queries).all():
            raise ContractError("nearest-neighbor query must be finite")
        n = len(self)
        k = 2 if n > 1 else 1
        dist, idx = self._tree.query(queries, k=k)
        if k == 1:
            idx = idx.reshape(-1)
            return idx.astype(np.int64), squared_distances(self.points[idx], queries)
        best = idx[:, 0].astype(np.int64)
        d2 = squared_distances(self.points[best], queries)
        ambiguous = np.flatnonzero(dist[:, 1] <= dist[:, 0] * (1 + _REL_SLACK) + _ABS_SLACK)
        for q in ambiguous:
            radius = dist[q, 0] * (1 + 2 * _REL_SLACK) + 2 * _ABS_SLACK
            cand = np.asarray(self._tree.query_ball_point(queries[q], radius), dtype=np.int64)
            cd2 = squared_distances(self.points[cand], queries[q])
            order = np.lexsort((cand, cd2))
            best[q] = cand[order[0]]
            d2[q] = cd2[order[0]]
        return best, d2

    def count_within_many(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Vectorized :func:`count_within_radius`."""
        if not radius >= 0:
            raise ContractError(f"radius must be >= 0, got {radius}")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(queries).all():
            raise ContractError("radius query must be finite")
        r2 = radius * radius
        candidates = self._tree.query_ball_point(
            queries, radius * (1 + _REL_SLACK) + _ABS_SLACK
        )
        counts = np.empty(len(queries), dtype=np.int64)
        for q, cand in enumerate(candidates):
            cand = np.asarray(cand, dtype=np.int64)
            counts[q] = int(np.count_nonzero(squared_distances(self.points[cand], queries[q]) <= r2))
        return counts


def build_index(cloud: PointCloud) -> NeighborIndex:
    return NeighborIndex(cloud)


def nearest(index: NeighborIndex, query) -> tuple[int, float]:
    """Closest indexed point to ``query`` as ``(point_index, squared_distance)``."""
    idx, d2 = index.nearest_many(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(d2[0])


def count_within_radius(index: NeighborIndex, query, radius: float) -> int:
    """Number of indexed points at distance <= ``radius`` (boundary inclusive)."""
    return int(index.count_within_many(np.asarray(query, dtype=np.float64).reshape(1, 3), radius)[0])
