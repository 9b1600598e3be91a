"""Growing the model shape with a newly registered scan.

The overlap between the transformed scan and the model is replaced by the
midpoints of matched pairs; everything else is kept as is. Descriptors are
merged the same way, so the grown model never needs its descriptors
recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import Descriptors
from .errors import DegenerateNormalSum
from .geometry import RigidTransform
from .pairwise import PreparedCloud, TricpParams, evaluate_alignment
from .spatial import SpatialIndex, as_cloud, estimate_resolution

_NORMAL_EPS = 1e-12


@dataclass
class OverlapPartition:
    """Split of model and (transformed) data indices into overlap and rest.

    ``pairing`` is an ``(N_f, 2)`` array of ``(data index, model index)``
    rows, one per overlapping data point. A model point may be paired with
    several data points; it is listed in ``q_overlap`` once.
    """

    q_overlap: np.ndarray
    q_rest: np.ndarray
    p_overlap: np.ndarray
    p_rest: np.ndarray
    pairing: np.ndarray

    @property
    def n_fused(self) -> int:
        return len(self.pairing)


@dataclass
class AugmentationRecord:
    n_model: int
    n_data: int
    n_rest_model: int
    n_fused: int
    n_rest_data: int
    n_desc_fused: int
    rude: bool

    @property
    def n_result(self) -> int:
        return self.n_rest_model + self.n_fused + self.n_rest_data


def _pairs(correspondences) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(correspondences, "data_index"):
        return np.asarray(correspondences.data_index, np.intp), np.asarray(correspondences.model_index, np.intp)
    data_idx, model_idx = correspondences
    return np.asarray(data_idx, np.intp), np.asarray(model_idx, np.intp)


def partition_overlap(P_transformed, Q, correspondences) -> OverlapPartition:
    """Partition both clouds using trimmed ``(data, model)`` correspondences.

    ``correspondences`` is either a :class:`~scanreg.pairwise.Correspondences`
    or a ``(data_idx, model_idx)`` pair of arrays. Each data index may occur
    at most once.
    """
    n_p, n_q = len(as_cloud(P_transformed)), len(as_cloud(Q))
    data_idx, model_idx = _pairs(correspondences)
    if len(data_idx) != len(model_idx):
        raise ValueError("correspondence arrays differ in length")
    if len(data_idx) and (data_idx.min() < 0 or data_idx.max() >= n_p or model_idx.min() < 0 or model_idx.max() >= n_q):
        raise IndexError("correspondence index out of range")
    p_overlap = np.unique(data_idx)
    if len(p_overlap) != len(data_idx):
        raise ValueError("a data point appears in more than one correspondence")
    order = np.argsort(data_idx, kind="stable")
    pairing = np.column_stack([data_idx[order], model_idx[order]]).reshape(-1, 2)
    q_overlap = np.unique(model_idx)
    q_mask = np.ones(n_q, dtype=bool)
    q_mask[q_overlap] = False
    p_mask = np.ones(n_p, dtype=bool)
    p_mask[p_overlap] = False
    return OverlapPartition(q_overlap, np.flatnonzero(q_mask), p_overlap, np.flatnonzero(p_mask), pairing)


def fuse_overlap(pairing, P_transformed, Q) -> np.ndarray:
    """Midpoint of every ``(data, model)`` pair."""
    pairing = np.asarray(pairing, dtype=np.intp).reshape(-1, 2)
    P_transformed, Q = as_cloud(P_transformed), as_cloud(Q)
    return 0.5 * (P_transformed[pairing[:, 0]] + Q[pairing[:, 1]])


def assemble(partition: OverlapPartition, P_transformed, Q) -> np.ndarray:
    """Rest of the model, then fused midpoints, then rest of the data."""
    P_transformed, Q = as_cloud(P_transformed), as_cloud(Q)
    return np.concatenate(
        [Q[partition.q_rest], fuse_overlap(partition.pairing, P_transformed, Q), P_transformed[partition.p_rest]]
    )


def fuse_normal(rotated_normal, model_normal) -> np.ndarray:
    """Unit mean of two normals after flipping the first onto the second's side.

    Raises:
        DegenerateNormalSum: the sum vanishes (only possible for zero input).
    """
    a = np.asarray(rotated_normal, dtype=float)
    b = np.asarray(model_normal, dtype=float)
    if np.dot(a, b) < 0:
        a = -a
    s = a + b
    n = np.linalg.norm(s)
    if n < _NORMAL_EPS:
        raise DegenerateNormalSum("matched normals cancel")
    return s / n


def _sort_scales(values: np.ndarray) -> np.ndarray:
    n, width = values.shape
    return -np.sort(-values.reshape(n, width // 3, 3), axis=2).reshape(n, width)


def merge_descriptors(descP: Descriptors, descQ: Descriptors, R, partition: OverlapPartition) -> Descriptors:
    """Descriptors of the assembled cloud, in :func:`assemble` order.

    Fused eigenvalue vectors are the mean of the two parents, re-sorted
    within each scale. Fused normals are the normalized mean of the rotated
    data normal and the model normal, after sign alignment; if that mean
    vanishes the model normal is kept. When only one parent is valid its
    descriptor is used unchanged.
    """
    R = np.asarray(R, dtype=float)
    pi, qi = partition.pairing[:, 0], partition.pairing[:, 1]
    vp, vq = descP.valid[pi], descQ.valid[qi]

    values = _sort_scales(0.5 * (descP.values[pi] + descQ.values[qi]))
    nP = descP.normals[pi] @ R.T
    nQ = descQ.normals[qi]
    flip = np.einsum("ij,ij->i", nP, nQ) < 0
    nP[flip] *= -1.0
    s = nP + nQ
    norm = np.linalg.norm(s, axis=1)
    degenerate = norm < _NORMAL_EPS
    normals = np.where(degenerate[:, None], nQ, s / np.where(degenerate, 1.0, norm)[:, None])
    sparse = descP.sparse[pi] & descQ.sparse[qi]

    only_p = vp & ~vq
    only_q = vq & ~vp
    values[only_p], normals[only_p], sparse[only_p] = descP.values[pi][only_p], nP[only_p], descP.sparse[pi][only_p]
    values[only_q], normals[only_q], sparse[only_q] = descQ.values[qi][only_q], nQ[only_q], descQ.sparse[qi][only_q]
    valid = vp | vq
    normals[~valid] = 0.0
    fused = Descriptors(normals, values, sparse, valid)
    return Descriptors.concatenate(
        [descQ.take(partition.q_rest), fused, descP.take(partition.p_rest).rotated(R)]
    )


def descriptor_pairing(
    P_desc_transformed, Q_desc, gate: float
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest model descriptor point for each transformed data one, within ``gate``."""
    idx, dist = SpatialIndex(Q_desc).nearest(as_cloud(P_desc_transformed))
    idx, dist = np.atleast_1d(idx), np.atleast_1d(dist)
    keep = dist <= gate
    return np.flatnonzero(keep), idx[keep]


def augment_model(
    model: PreparedCloud,
    data: PreparedCloud,
    transform: RigidTransform,
    correspondences=None,
    *,
    rude: bool = False,
    tricp: TricpParams | None = None,
    desc_gate_factor: float = 3.0,
    icp_freq: int = 10,
) -> tuple[PreparedCloud, AugmentationRecord]:
    """Grow ``model`` with ``data`` registered by ``transform``.

    ``correspondences`` must index the full-resolution clouds; when omitted
    they are re-derived with one trimmed pass at ``transform``. In rude mode
    the transformed data is appended without fusion.
    """
    P_t = transform.apply(data.points)
    Pd_t = transform.apply(data.desc_points)
    n_q, n_p = len(model.points), len(data.points)

    if rude:
        points = np.concatenate([model.points, P_t])
        desc_points = np.concatenate([model.desc_points, Pd_t])
        desc = Descriptors.concatenate([model.descriptors, data.descriptors.rotated(transform.R)])
        record = AugmentationRecord(n_q, n_p, n_q, 0, n_p, 0, True)
        return PreparedCloud(points, desc_points, desc, icp_freq=icp_freq), record

    if correspondences is None:
        _, correspondences, _, _ = evaluate_alignment(data.points, model.index, transform, tricp or TricpParams())
    part = partition_overlap(P_t, model.points, correspondences)
    points = assemble(part, P_t, model.points)

    gate = desc_gate_factor * estimate_resolution(model.desc_points)
    d_data, d_model = descriptor_pairing(Pd_t, model.desc_points, gate)
    desc_part = partition_overlap(Pd_t, model.desc_points, (d_data, d_model))
    desc_points = assemble(desc_part, Pd_t, model.desc_points)
    desc = merge_descriptors(data.descriptors, model.descriptors, transform.R, desc_part)

    record = AugmentationRecord(n_q, n_p, len(part.q_rest), part.n_fused, len(part.p_rest), desc_part.n_fused, False)
    return PreparedCloud(points, desc_points, desc, icp_freq=icp_freq), record
