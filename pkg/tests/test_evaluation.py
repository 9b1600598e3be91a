import numpy as np
import pytest

from scanreg.errors import InvalidOverlap, LengthMismatch
from scanreg.evaluation import (
    GroundTruth,
    bbox_diagonal,
    evaluate,
    gauge_fix,
    make_base_surface,
    measure_overlap,
    synth_generate,
)
from scanreg.geometry import RigidTransform, compose, random_transform, rotation_about_axis
from scanreg.spatial import estimate_resolution


def random_transforms(rng, n):
    return [random_transform(rng, np.pi, 10.0) for _ in range(n)]


def test_evaluate_identical_lists(rng):
    Ts = random_transforms(rng, 5)
    r = evaluate(Ts, GroundTruth(Ts))
    assert r.e_R == 0.0 and r.e_t == 0.0


def test_rotation_error_closed_form():
    n, theta = 4, 0.3
    gt = [RigidTransform.identity() for _ in range(n)]
    est = list(gt)
    est[2] = RigidTransform(rotation_about_axis([0, 0, 1], theta))
    r = evaluate(est, gt)
    assert r.e_R == pytest.approx(2 * np.sqrt(2) * abs(np.sin(theta / 2)) / n, abs=1e-12)
    assert r.e_t == 0.0


def test_gauge_fixing_removes_global_frame(rng):
    gt = random_transforms(rng, 4)
    G = random_transform(rng, np.pi, 100.0)
    est = [compose(G, T) for T in gt]
    r = evaluate(est, gt)
    assert r.e_R < 1e-12 and r.e_t < 1e-10
    fixed = gauge_fix(gt, 2)
    assert np.allclose(fixed[2].R, np.eye(3)) and np.allclose(fixed[2].t, 0)


def test_relabeling_invariance(rng):
    gt, est = random_transforms(rng, 5), random_transforms(rng, 5)
    perm = [0, 3, 1, 4, 2]
    a = evaluate(est, gt)
    b = evaluate([est[i] for i in perm], [gt[i] for i in perm])
    assert b.e_R == pytest.approx(a.e_R, abs=1e-12)


def test_length_mismatch(rng):
    with pytest.raises(LengthMismatch):
        evaluate(random_transforms(rng, 2), random_transforms(rng, 3))


def test_measure_overlap_examples(rng):
    A = rng.normal(size=(100, 3))
    assert measure_overlap(A, A, 1e-9) == 1.0
    assert measure_overlap(A, A + 100.0, 1.0) == 0.0
    B = np.concatenate([A[:50], rng.normal(size=(50, 3)) + 50])
    D = np.linalg.norm(A[:, None] - B[None], axis=2).min(axis=1)
    assert measure_overlap(A, B, 0.2) == np.mean(D <= 0.2)


def test_base_surface_is_deterministic():
    a, b = make_base_surface(6000, seed=3), make_base_surface(6000, seed=3)
    assert np.array_equal(a, b)
    assert 140 < bbox_diagonal(make_base_surface()) < 170


def test_synth_is_deterministic(base_surface):
    s1, g1 = synth_generate(base_surface, 3, 0.6, 5e-4, 9)
    s2, g2 = synth_generate(base_surface, 3, 0.6, 5e-4, 9)
    assert all(np.array_equal(a, b) for a, b in zip(s1, s2))
    assert all(np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t) for a, b in zip(g1.transforms, g2.transforms))


def test_synth_validation(base_surface):
    with pytest.raises(InvalidOverlap):
        synth_generate(base_surface, 3, 0.2, 0.0, 0)
    with pytest.raises(InvalidOverlap):
        synth_generate(base_surface, 3, 0.99, 0.0, 0)
    with pytest.raises(ValueError):
        synth_generate(base_surface, 1, 0.6, 0.0, 0)
    with pytest.raises(ValueError):
        synth_generate(base_surface[:1000], 2, 0.6, 0.0, 0)


def test_reference_scan_is_identity(ring):
    _, gt = ring
    assert np.array_equal(gt.transforms[0].R, np.eye(3)) and np.array_equal(gt.transforms[0].t, np.zeros(3))


def test_two_scan_overlap_matches_request(base_surface):
    scans, gt = synth_generate(base_surface, 2, 0.6, 0.0, 1)
    a, b = (T.apply(s) for T, s in zip(gt.transforms, scans))
    tol = estimate_resolution(base_surface)
    assert measure_overlap(a, b, tol) == pytest.approx(0.6, abs=0.05)
    assert measure_overlap(b, a, tol) == pytest.approx(0.6, abs=0.05)


def test_high_overlap_neighbours_share_points(base_surface):
    n = 4
    scans, gt = synth_generate(base_surface, n, 0.95, 0.0, 2)
    placed = [T.apply(s) for T, s in zip(gt.transforms, scans)]
    tol = estimate_resolution(base_surface)
    # find each scan's sector neighbour by shared base indices, then measure
    for i in range(n):
        j = max((k for k in range(n) if k != i), key=lambda k: len(np.intersect1d(gt.base_indices[i], gt.base_indices[k])))
        assert measure_overlap(placed[i], placed[j], tol) >= 0.9


def test_ground_truth_reassembles_base(base_surface):
    sigma = 5e-4
    scans, gt = synth_generate(base_surface, 4, 0.6, sigma, 4)
    diag = bbox_diagonal(base_surface)
    for T, s, idx in zip(gt.transforms, scans, gt.base_indices):
        dev = np.linalg.norm(T.apply(s) - base_surface[idx], axis=1)
        assert dev.max() <= 4 * sigma * diag * (1 + 1e-9)
