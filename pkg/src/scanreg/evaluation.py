"""Registration error metrics and a synthetic range-scan generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidOverlap, LengthMismatch
from .geometry import RigidTransform, compose, invert, random_transform
from .spatial import SpatialIndex, as_cloud


@dataclass
class GroundTruth:
    """Per-scan transforms mapping each scan into the reference frame.

    ``base_indices[i]`` lists the rows of the base surface that scan ``i``
    was cropped from (kept in base order).
    """

    transforms: list[RigidTransform]
    base_indices: list[np.ndarray] = field(default_factory=list)
    reference: int = 0

    def __len__(self) -> int:
        return len(self.transforms)


@dataclass
class ErrorReport:
    e_R: float
    e_t: float
    rotation_errors: np.ndarray
    translation_errors: np.ndarray

    def as_dict(self) -> dict:
        return {
            "e_R": self.e_R,
            "e_t": self.e_t,
            "rotation_errors": self.rotation_errors.tolist(),
            "translation_errors": self.translation_errors.tolist(),
        }


def gauge_fix(transforms, reference: int = 0) -> list[RigidTransform]:
    """Left-multiply every transform so the reference entry becomes identity."""
    anchor = invert(transforms[reference])
    return [compose(anchor, T) for T in transforms]


def evaluate(estimated, gt, reference: int | None = None) -> ErrorReport:
    """Mean Frobenius rotation error and mean translation error.

    Both transform lists are gauge-fixed on the reference scan before
    differencing, so a global change of frame does not count as error.
    """
    gt_transforms = gt.transforms if isinstance(gt, GroundTruth) else list(gt)
    if reference is None:
        reference = gt.reference if isinstance(gt, GroundTruth) else 0
    estimated = list(estimated)
    if len(estimated) != len(gt_transforms):
        raise LengthMismatch(f"{len(estimated)} estimated vs {len(gt_transforms)} ground-truth transforms")
    est = gauge_fix(estimated, reference)
    ref = gauge_fix(gt_transforms, reference)
    rot = np.array([np.linalg.norm(a.R - b.R) for a, b in zip(est, ref)])
    trans = np.array([np.linalg.norm(a.t - b.t) for a, b in zip(est, ref)])
    return ErrorReport(float(rot.mean()), float(trans.mean()), rot, trans)


def measure_overlap(A, B, tol: float) -> float:
    """Fraction of the points of ``A`` whose nearest neighbour in ``B`` is within ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_cloud(A)
    _, d = SpatialIndex(B).nearest(A)
    return float(np.mean(d <= tol))


def bbox_diagonal(cloud) -> float:
    cloud = as_cloud(cloud)
    return float(np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0)))


def make_base_surface(
    n_points: int = 20000,
    radius: float = 40.0,
    n_bumps: int = 40,
    seed: int = 0,
    bump_width: tuple[float, float] = (0.12, 0.3),
) -> np.ndarray:
    """Closed bumpy blob sampled at uniformly random directions.

    A sphere whose radius is modulated by Gaussian bumps at random
    directions, so that local curvature varies across the surface. Random
    rather than lattice sampling matters: scans cropped from a regular
    lattice share its periodicity, which gives ICP spurious minima one
    lattice step away from the truth.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    centers = rng.normal(size=(n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    widths = rng.uniform(*bump_width, n_bumps)
    heights = rng.uniform(0.1, 0.25, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)
    ang = np.arccos(np.clip(dirs @ centers.T, -1.0, 1.0))
    r = 1.0 + (heights * np.exp(-0.5 * (ang / widths) ** 2)).sum(axis=1)
    # mild anisotropy so the blob has no rotational symmetry
    r *= 1.0 + 0.12 * dirs[:, 0] ** 2 - 0.08 * dirs[:, 2]
    return radius * r[:, None] * dirs


def sector_layout(n_scans: int, overlap: float) -> tuple[float, float]:
    """Angular width and step (radians) of the azimuth sectors."""
    width = min(2.0 * np.pi / (n_scans * (1.0 - overlap)), 4.0 * np.pi / 3.0)
    return width, width * (1.0 - overlap)


def _bounded_noise(rng: np.random.Generator, sigma: float, n: int) -> np.ndarray:
    noise = rng.normal(scale=sigma, size=(n, 3))
    if sigma > 0:
        length = np.linalg.norm(noise, axis=1, keepdims=True)
        noise *= np.minimum(1.0, 4.0 * sigma / np.maximum(length, 1e-300))
    return noise


def synth_generate(
    base,
    n_scans: int,
    overlap: float,
    noise_sigma: float,
    seed: int,
    max_angle: float = np.pi,
) -> tuple[list[np.ndarray], GroundTruth]:
    """Crop overlapping azimuth sectors of ``base`` and scatter them.

    Consecutive sectors share ``overlap`` of their angular width. The scans
    are shuffled; the first returned scan stays in the base frame and every
    other scan gets a random rigid motion (rotation up to ``max_angle``,
    translation up to the bounding-box diagonal). Gaussian noise with
    standard deviation ``noise_sigma * diagonal`` is added to each scan,
    with each offset's length capped at four standard deviations.

    Returns the scans and the transforms that map each back to the frame of
    the first scan.
    """
    base = as_cloud(base)
    if n_scans < 2:
        raise ValueError("need at least two scans")
    if not 0.3 <= overlap <= 0.95:
        raise InvalidOverlap(f"overlap must lie in [0.3, 0.95], got {overlap}")
    if len(base) < 5000:
        raise ValueError("base surface needs at least 5000 points")

    rng = np.random.default_rng(seed)
    diag = bbox_diagonal(base)
    centered = base - base.mean(axis=0)
    azimuth = np.arctan2(centered[:, 1], centered[:, 0])
    width, step = sector_layout(n_scans, overlap)
    start = rng.uniform(0.0, 2.0 * np.pi)

    sectors = []
    for i in range(n_scans):
        rel = np.mod(azimuth - (start + i * step), 2.0 * np.pi)
        sectors.append(np.flatnonzero(rel < width))

    order = rng.permutation(n_scans)
    scans, transforms, indices = [], [], []
    for j, sector in enumerate(order):
        idx = sectors[sector]
        pts = base[idx] + _bounded_noise(rng, noise_sigma * diag, len(idx))
        if j == 0:
            motion = RigidTransform.identity()
        else:
            motion = random_transform(rng, max_angle, diag)
        scans.append(motion.apply(pts))
        transforms.append(invert(motion))
        indices.append(idx)
    return scans, GroundTruth(transforms, indices)
