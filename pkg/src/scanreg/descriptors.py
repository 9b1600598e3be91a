"""Multi-scale covariance descriptors: a unit normal plus eigenvalue spectra.

For each point and each support radius the neighbourhood covariance is
eigen-decomposed. The descriptor vector stacks the trace-normalized
eigenvalues of every scale (largest first), which makes it invariant to
rigid motion. The normal is the smallest-eigenvalue direction at the
largest scale, oriented away from the cloud centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegeneratePoint, NullDescriptor, SparseNeighborhood
from .spatial import SpatialIndex, as_cloud

MIN_NEIGHBORS = 4
DEFAULT_RADIUS_MULTIPLIERS = (10.0, 20.0, 40.0)
_UNIFORM = np.full(3, 1.0 / 3.0)


@dataclass(frozen=True)
class ScaleSet:
    radii: tuple[float, ...]

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if len(radii) < 2:
            raise ValueError("need at least two support radii")
        if radii[0] <= 0 or any(a >= b for a, b in zip(radii, radii[1:])):
            raise ValueError(f"radii must be positive and strictly increasing: {radii}")
        object.__setattr__(self, "radii", radii)

    @classmethod
    def from_resolution(cls, resolution: float, multipliers: Sequence[float] = DEFAULT_RADIUS_MULTIPLIERS):
        return cls(tuple(m * resolution for m in multipliers))

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def largest(self) -> float:
        return self.radii[-1]


class MultiScaleDescriptor(NamedTuple):
    normal: np.ndarray
    values: np.ndarray
    sparse: np.ndarray


@dataclass
class Descriptors:
    """Descriptors for a whole cloud, stored column-wise.

    ``values`` has shape ``(N, 3L)``, ``normals`` ``(N, 3)``. Rows with
    ``valid == False`` are null descriptors and never take part in matching.
    """

    normals: np.ndarray
    values: np.ndarray
    sparse: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_scales(self) -> int:
        return self.values.shape[1] // 3

    def __getitem__(self, i: int) -> MultiScaleDescriptor | None:
        if not self.valid[i]:
            return None
        return MultiScaleDescriptor(self.normals[i], self.values[i], self.sparse[i])

    def take(self, idx) -> Descriptors:
        idx = np.asarray(idx, dtype=np.intp)
        return Descriptors(self.normals[idx], self.values[idx], self.sparse[idx], self.valid[idx])

    def rotated(self, R: np.ndarray) -> Descriptors:
        return Descriptors(self.normals @ np.asarray(R).T, self.values.copy(), self.sparse.copy(), self.valid.copy())

    @classmethod
    def concatenate(cls, parts: Sequence[Descriptors]) -> Descriptors:
        return cls(
            np.concatenate([p.normals for p in parts]),
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.sparse for p in parts]),
            np.concatenate([p.valid for p in parts]),
        )

    @classmethod
    def empty(cls, n_scales: int) -> Descriptors:
        return cls(np.zeros((0, 3)), np.zeros((0, 3 * n_scales)), np.zeros((0, n_scales), bool), np.zeros(0, bool))


def _covariance(neighbors: np.ndarray) -> np.ndarray:
    centered = neighbors - neighbors.mean(axis=0)
    return centered.T @ centered / len(neighbors)


def covariance_at_scale(index: SpatialIndex, cloud, point_idx: int, r: float) -> np.ndarray:
    """Covariance (1/k normalization) of the indexed points within ``r`` of
    ``cloud[point_idx]``."""
    center = as_cloud(cloud)[point_idx]
    idx = index.radius_search(center, r)
    if len(idx) < MIN_NEIGHBORS:
        raise SparseNeighborhood(f"{len(idx)} neighbours within r={r}")
    return _covariance(index.points[idx])


def _spectrum(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending trace-normalized eigenvalues and the smallest eigenvector."""
    w, V = np.linalg.eigh(C)
    w = np.clip(w, 0.0, None)
    return w[::-1] / w.sum(), V[:, 0]


def _orient(normal: np.ndarray, point: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    if np.dot(normal, point - centroid) < 0:
        return -normal
    return normal


def compute_descriptor(index: SpatialIndex, cloud, point_idx: int, scales: ScaleSet) -> MultiScaleDescriptor:
    """Descriptor of a single point; neighbourhoods are drawn from ``index``.

    Raises:
        DegeneratePoint: every scale is sparse.
    """
    cloud = as_cloud(cloud)
    values = np.empty(3 * len(scales))
    sparse = np.zeros(len(scales), dtype=bool)
    normal = None
    for l, r in enumerate(scales.radii):
        try:
            C = covariance_at_scale(index, cloud, point_idx, r)
        except SparseNeighborhood:
            values[3 * l : 3 * l + 3] = _UNIFORM
            sparse[l] = True
            continue
        if np.trace(C) <= 0:
            values[3 * l : 3 * l + 3] = _UNIFORM
            sparse[l] = True
            continue
        values[3 * l : 3 * l + 3], normal = _spectrum(C)
    if sparse.all() or sparse[-1]:
        raise DegeneratePoint(f"point {point_idx} has no usable neighbourhood")
    normal = _orient(normal, cloud[point_idx], cloud.mean(axis=0))
    return MultiScaleDescriptor(normal, values, sparse)


def compute_all(cloud, scales: ScaleSet, support=None) -> Descriptors:
    """Descriptors for every point of ``cloud``.

    ``support`` supplies the neighbourhood points (a denser version of the
    same surface, typically); it defaults to ``cloud`` itself. Points without
    any usable scale get a null descriptor.
    """
    cloud = as_cloud(cloud)
    n, L = len(cloud), len(scales)
    values = np.tile(_UNIFORM, (n, L))
    sparse = np.ones((n, L), dtype=bool)
    normals = np.zeros((n, 3))
    if n == 0:
        return Descriptors(normals, values, sparse, np.zeros(0, bool))
    index = support if isinstance(support, SpatialIndex) else SpatialIndex(cloud if support is None else support)
    pts = index.points
    last_vectors = np.zeros((n, 3))

    for l, r in enumerate(scales.radii):
        neigh = index.radius_search_many(cloud, r)
        counts = np.array([len(ix) for ix in neigh])
        ok = np.flatnonzero(counts >= MIN_NEIGHBORS)
        if len(ok) == 0:
            continue
        flat = np.concatenate([neigh[i] for i in ok])
        owner = np.repeat(np.arange(len(ok)), counts[ok])
        # centre on the query point first to keep the second moments small
        local = pts[flat] - cloud[ok][owner]
        k = counts[ok][:, None]
        starts = np.concatenate([[0], np.cumsum(counts[ok])[:-1]])
        mean = np.add.reduceat(local, starts, axis=0) / k
        centered = local - mean[owner]
        outer = (centered[:, :, None] * centered[:, None, :]).reshape(-1, 9)
        C = (np.add.reduceat(outer, starts, axis=0) / k).reshape(-1, 3, 3)
        w, V = np.linalg.eigh(C)
        w = np.clip(w, 0.0, None)
        trace = w.sum(axis=1)
        good = trace > 0
        rows = ok[good]
        values[rows, 3 * l : 3 * l + 3] = w[good][:, ::-1] / trace[good][:, None]
        sparse[rows, l] = False
        last_vectors[rows] = V[good][:, :, 0]

    valid = ~sparse[:, -1]
    centroid = cloud.mean(axis=0)
    flip = np.einsum("ij,ij->i", last_vectors, cloud - centroid) < 0
    normals = np.where(flip[:, None], -last_vectors, last_vectors)
    normals[~valid] = 0.0
    return Descriptors(normals, values, sparse, valid)


def descriptor_distance(Da, Db) -> float:
    if Da is None or Db is None:
        raise NullDescriptor("cannot compare a null descriptor")
    if isinstance(Da, MultiScaleDescriptor):
        Da = Da.values
    if isinstance(Db, MultiScaleDescriptor):
        Db = Db.values
    Da = np.asarray(Da, dtype=float)
    Db = np.asarray(Db, dtype=float)
    if Da.shape != Db.shape:
        raise ValueError("descriptor lengths differ")
    return float(np.linalg.norm(Da - Db))
