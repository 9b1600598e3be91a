"""Exact nearest-neighbour and radius queries, resolution and downsampling."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, TooFewPoints


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim == 1 and cloud.size == 3:
        cloud = cloud.reshape(1, 3)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {cloud.shape}")
    return cloud


class SpatialIndex:
    """Immutable k-d tree over a fixed point list.

    Nearest-neighbour answers are exact, with ties resolved to the smallest
    point index. Radius queries are inclusive (``d <= r``) and return indices
    in ascending order.
    """

    def __init__(self, points):
        points = as_cloud(points)
        if len(points) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        if not np.all(np.isfinite(points)):
            raise ValueError("cloud contains non-finite coordinates")
        self.points = points.copy()
        self.points.flags.writeable = False
        self._tree = cKDTree(self.points)
        self.lower = self.points.min(axis=0)
        self.upper = self.points.max(axis=0)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest indexed point for each query.

        Accepts one point or an ``(M, 3)`` array and returns ``(indices,
        distances)`` with matching leading shape.
        """
        q = np.asarray(queries, dtype=float)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        if len(self.points) == 1:
            dist = np.linalg.norm(q - self.points[0], axis=1)
            idx = np.zeros(len(q), dtype=np.intp)
        else:
            d2, i2 = self._tree.query(q, k=2)
            idx = i2[:, 0].astype(np.intp)
            dist = d2[:, 0]
            for row in np.flatnonzero(d2[:, 1] <= d2[:, 0]):
                idx[row] = self._resolve_tie(q[row], dist[row])
        if single:
            return idx[0], dist[0]
        return idx, dist

    def _resolve_tie(self, q: np.ndarray, d: float) -> int:
        cand = np.asarray(self._tree.query_ball_point(q, d * (1 + 1e-12) + 1e-300), dtype=np.intp)
        cd = np.linalg.norm(self.points[cand] - q, axis=1)
        best = cand[cd <= cd.min()]
        return int(best.min())

    def radius_search(self, q, r: float) -> np.ndarray:
        """Indices with distance ``<= r`` from ``q``, ascending."""
        if r <= 0:
            raise ValueError("radius must be positive")
        idx = self._tree.query_ball_point(np.asarray(q, dtype=float), r)
        return np.array(sorted(idx), dtype=np.intp)

    def radius_search_many(self, queries, r: float) -> list[np.ndarray]:
        if r <= 0:
            raise ValueError("radius must be positive")
        lists = self._tree.query_ball_point(np.asarray(queries, dtype=float).reshape(-1, 3), r)
        return [np.array(sorted(ix), dtype=np.intp) for ix in lists]


def build(points) -> SpatialIndex:
    return SpatialIndex(points)


def nearest(index: SpatialIndex, q) -> tuple[int, float]:
    i, d = index.nearest(np.asarray(q, dtype=float).reshape(3))
    return int(i), float(d)


def radius_search(index: SpatialIndex, q, r: float) -> np.ndarray:
    return index.radius_search(q, r)


def nearest_distinct_distances(cloud) -> np.ndarray:
    """Distance from every point to its nearest neighbour at non-zero distance.

    Points whose every neighbour coincides with them get ``inf``.
    """
    cloud = as_cloud(cloud)
    tree = cKDTree(cloud)
    n = len(cloud)
    out = np.full(n, np.inf)
    pending = np.arange(n)
    k = 2
    while len(pending):
        kk = min(k, n)
        d, _ = tree.query(cloud[pending], k=kk)
        d = d.reshape(len(pending), kk)
        positive = np.where(d > 0, d, np.inf)
        first = positive.min(axis=1)
        found = np.isfinite(first)
        out[pending[found]] = first[found]
        if kk == n:
            break
        pending = pending[~found]
        k *= 4
    return out


def estimate_resolution(cloud) -> float:
    """Median distance from each point to its nearest distinct neighbour."""
    cloud = as_cloud(cloud)
    if len(cloud) < 2:
        raise TooFewPoints("resolution needs at least two points")
    d = nearest_distinct_distances(cloud)
    d = d[np.isfinite(d)]
    if len(d) == 0:
        raise TooFewPoints("all points coincide")
    return float(np.median(d))


def downsample(cloud, frequency: int) -> np.ndarray:
    """Keep every ``frequency``-th point (indices 0, f, 2f, ...)."""
    if int(frequency) != frequency or frequency < 1:
        raise ValueError("frequency must be a positive integer")
    return as_cloud(cloud)[:: int(frequency)].copy()


def downsample_indices(n: int, frequency: int) -> np.ndarray:
    return np.arange(0, n, int(frequency))
