"""Rigid-motion algebra and the closed-form least-squares rigid fit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration

# Singular-value ratio below which centered source points count as rank deficient.
RANK_TOL = 1e-8
# Orthonormality drift that triggers re-projection onto SO(3).
DRIFT_TOL = 1e-7


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix to ``M`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


@dataclass(frozen=True)
class RigidTransform:
    """Rotation ``R`` (3x3, det +1) followed by translation ``t``.

    Maps a point ``p`` to ``R @ p + t``. Arrays are copied and made read-only
    on construction so instances can be shared freely.
    """

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def is_valid(self, tol: float = 1e-9) -> bool:
        ortho = np.linalg.norm(self.R.T @ self.R - np.eye(3))
        return bool(ortho <= tol and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a single point ``(3,)`` or a cloud ``(N, 3)``."""
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.t

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self o other``: apply ``other`` first."""
        return compose(self, other)

    def inverse(self) -> RigidTransform:
        return invert(self)

    def rotation_error(self, other: RigidTransform) -> float:
        """Frobenius norm of the rotation difference."""
        return float(np.linalg.norm(self.R - other.R))

    def translation_error(self, other: RigidTransform) -> float:
        return float(np.linalg.norm(self.t - other.t))


def apply(T: RigidTransform, p: np.ndarray) -> np.ndarray:
    return T.apply(p)


def compose(T2: RigidTransform, T1: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``T1`` and then ``T2``."""
    R = T2.R @ T1.R
    if np.linalg.norm(R.T @ R - np.eye(3)) > DRIFT_TOL:
        R = project_to_so3(R)
    return RigidTransform(R, T2.R @ T1.t + T2.t)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.R.T
    return RigidTransform(Rt, -Rt @ T.t)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle in ``[0, max_angle]``."""
    axis = rng.normal(size=3)
    return rotation_about_axis(axis, rng.uniform(0.0, max_angle))


def random_transform(
    rng: np.random.Generator, max_angle: float = np.pi, max_translation: float = 1.0
) -> RigidTransform:
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return RigidTransform(
        random_rotation(rng, max_angle), direction * rng.uniform(0.0, max_translation)
    )


def estimate_rigid_transform(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion taking ``source`` rows onto ``target`` rows.

    Minimizes ``sum ||R p_i + t - q_i||^2`` by centroid removal and an SVD of
    the 3x3 cross-covariance, with the sign of the last singular direction
    flipped when needed so that ``det(R) = +1``.

    Raises:
        DegenerateConfiguration: fewer than three pairs, or the centered
            source points are (numerically) collinear.
    """
    P = np.asarray(source, dtype=float).reshape(-1, 3)
    Q = np.asarray(target, dtype=float).reshape(-1, 3)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    if len(P) < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {len(P)}")

    p_mean = P.mean(axis=0)
    q_mean = Q.mean(axis=0)
    Pc = P - p_mean
    Qc = Q - q_mean

    sv = np.linalg.svd(Pc, compute_uv=False)
    if sv[0] == 0.0 or sv[1] < RANK_TOL * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    return RigidTransform(R, q_mean - R @ p_mean)


def estimate_rigid_transforms_batch(P: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rigid fit for a stack of small correspondence sets.

    ``P`` and ``Q`` have shape ``(B, k, 3)``. Returns ``(R, t)`` with shapes
    ``(B, 3, 3)`` and ``(B, 3)``. No degeneracy checks; callers score the
    resulting hypotheses and discard bad ones.
    """
    p_mean = P.mean(axis=1, keepdims=True)
    q_mean = Q.mean(axis=1, keepdims=True)
    H = np.einsum("bki,bkj->bij", P - p_mean, Q - q_mean)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = V @ Ut
    t = q_mean[:, 0, :] - np.einsum("bij,bj->bi", R, p_mean[:, 0, :])
    return R, t
