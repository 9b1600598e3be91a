"""Pairwise registration: seed matching on descriptors, fast correspondence
propagation over the best-ranked seeds, RANSAC consensus, quality-based
selection and trimmed ICP refinement.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .descriptors import DEFAULT_RADIUS_MULTIPLIERS, Descriptors, ScaleSet, compute_all
from .errors import DegenerateConfiguration, EmptySubset, NoAlignment, NoValidDescriptors
from .geometry import RigidTransform, estimate_rigid_transform, estimate_rigid_transforms_batch
from .spatial import SpatialIndex, as_cloud, downsample, estimate_resolution

# ---------------------------------------------------------------------------
# Trimmed ICP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TricpParams:
    """Trimmed ICP settings.

    ``epsilon=None`` means ``epsilon_scale * diag**2`` with ``diag`` the
    bounding-box diagonal of the model.
    """

    lam: float = 2.0
    xi_min: float = 0.2
    max_iterations: int = 100
    epsilon: float | None = None
    epsilon_scale: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.xi_min < 1.0:
            raise ValueError("xi_min must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def resolve_epsilon(self, diag: float) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return max(self.epsilon_scale * diag * diag, 1e-300)


class Correspondences(NamedTuple):
    data_index: np.ndarray
    model_index: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.data_index)

    def take(self, idx) -> Correspondences:
        return Correspondences(self.data_index[idx], self.model_index[idx], self.distance[idx])


@dataclass
class PairwiseStats:
    seeds_total: int = 0
    seeds_propagated: int = 0
    ransac_runs: int = 0
    candidates: int = 0
    match_set_sizes: list = field(default_factory=list)
    consensus_sizes: list = field(default_factory=list)
    visited_nodes: list = field(default_factory=list)
    icp_iterations: int = 0
    timings: dict = field(default_factory=dict)


@dataclass
class PairwiseResult:
    """Output of trimmed ICP or a full pairwise registration.

    ``correspondences`` is the trimmed subset at the returned transform;
    ``psi_history`` logs the objective at every evaluated iterate.
    """

    transform: RigidTransform
    xi: float
    tmse: float
    psi: float
    lam: float = 2.0
    correspondences: Correspondences | None = None
    psi_history: list = field(default_factory=list)
    iterations: int = 0
    stats: PairwiseStats = field(default_factory=PairwiseStats)


def tmse(source, target, transform: RigidTransform | None = None) -> float:
    """Mean squared distance between paired rows after moving ``source``."""
    source = as_cloud(source)
    target = as_cloud(target)
    if len(source) == 0:
        raise EmptySubset("TMSE of an empty subset")
    if transform is not None:
        source = transform.apply(source)
    return float(np.mean(np.sum((source - target) ** 2, axis=1)))


def psi(xi: float, tmse_value: float, lam: float = 2.0) -> float:
    return tmse_value / xi ** (1.0 + lam)


def correspondence_step(P, Q_index: SpatialIndex, T: RigidTransform) -> Correspondences:
    """Closest model point for every transformed data point."""
    P = as_cloud(P)
    idx, dist = Q_index.nearest(T.apply(P))
    return Correspondences(np.arange(len(P)), idx, dist)


def _min_count(n: int, xi_min: float) -> int:
    return max(1, math.ceil(xi_min * n - 1e-9))


def overlap_step(corr: Correspondences, params: TricpParams, sq_dist: np.ndarray | None = None):
    """Choose the overlap fraction minimizing ``psi`` over all trimmed prefixes.

    Correspondences are sorted by distance; every prefix size from
    ``ceil(xi_min * N)`` to ``N`` is scored by the mean squared distance of
    its members divided by ``xi**(1 + lam)``. Ties go to the larger prefix.

    Returns ``(xi, subset, tmse)``.
    """
    n = len(corr)
    if n == 0:
        raise EmptySubset("no correspondences")
    sq = corr.distance**2 if sq_dist is None else sq_dist
    order = np.argsort(sq, kind="stable")
    sorted_sq = sq[order]
    lo = _min_count(n, params.xi_min)
    counts = np.arange(lo, n + 1)
    means = np.cumsum(sorted_sq)[lo - 1 :] / counts
    scores = means / (counts / n) ** (1.0 + params.lam)
    best = np.flatnonzero(scores == scores.min())[-1]
    keep = int(counts[best])
    subset = order[:keep]
    return keep / n, corr.take(subset), float(np.mean(sorted_sq[:keep]))


def _squared_residuals(P: np.ndarray, Q: np.ndarray, T: RigidTransform, corr: Correspondences) -> np.ndarray:
    diff = T.apply(P[corr.data_index]) - Q[corr.model_index]
    return np.sum(diff * diff, axis=1)


def evaluate_alignment(P, Q_index: SpatialIndex, T: RigidTransform, params: TricpParams):
    """One correspondence + overlap pass at ``T``; returns ``(xi, subset, tmse, psi)``."""
    P = as_cloud(P)
    corr = correspondence_step(P, Q_index, T)
    sq = _squared_residuals(P, Q_index.points, T, corr)
    xi, subset, e = overlap_step(corr, params, sq)
    return xi, subset, e, psi(xi, e, params.lam)


def trimmed_icp(P, Q, T0: RigidTransform | None = None, params: TricpParams | None = None) -> PairwiseResult:
    """Trimmed ICP from ``T0`` until ``K`` iterations or ``|psi_k - psi_{k-1}| < epsilon``.

    ``Q`` may be an array or a prebuilt :class:`SpatialIndex`. The reported
    ``(xi, tmse, psi)`` are evaluated at the returned transform.
    """
    params = params or TricpParams()
    P = as_cloud(P)
    Q_index = Q if isinstance(Q, SpatialIndex) else SpatialIndex(Q)
    T = T0 or RigidTransform.identity()
    eps = params.resolve_epsilon(Q_index.bbox_diagonal)

    history = []
    prev = math.inf
    k = 0
    while True:
        k += 1
        xi, subset, e, score = evaluate_alignment(P, Q_index, T, params)
        history.append(score)
        # a zero objective cannot improve further
        if k >= params.max_iterations or abs(score - prev) < eps or score == 0.0:
            break
        if len(subset) < 3:
            raise DegenerateConfiguration("trimmed subset has fewer than 3 points")
        T = estimate_rigid_transform(P[subset.data_index], Q_index.points[subset.model_index])
        prev = score
    return PairwiseResult(T, xi, e, score, params.lam, subset, history, k)


# ---------------------------------------------------------------------------
# Seeds and propagation
# ---------------------------------------------------------------------------


class SeedMatch(NamedTuple):
    data_idx: int
    model_idx: int
    d_distance: float


@dataclass
class MatchSet:
    data_idx: np.ndarray
    model_idx: np.ndarray
    seed: SeedMatch
    visited: int = 0

    def __len__(self) -> int:
        return len(self.data_idx)


@dataclass(frozen=True)
class PropagationThresholds:
    """Gates used while growing a seed match.

    ``d_threshold``: max descriptor distance; ``normal_angle``: max normal
    disagreement in radians; ``length_tol``: max change of pairwise
    distances; ``radius``: spatial neighbourhood explored around each match.
    """

    d_threshold: float
    normal_angle: float
    length_tol: float
    radius: float
    min_matches_for_rotation: int = 6


def _nn_descriptor(query: np.ndarray, base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact NN in descriptor space with ties resolved to the smaller index."""
    tree = cKDTree(base)
    if len(base) == 1:
        d, _ = tree.query(query, k=1)
        return np.zeros(len(query), dtype=np.intp), np.atleast_1d(d)
    d2, i2 = tree.query(query, k=2)
    idx = i2[:, 0].astype(np.intp)
    for row in np.flatnonzero(d2[:, 1] <= d2[:, 0]):
        dist = np.linalg.norm(base - query[row], axis=1)
        idx[row] = int(np.flatnonzero(dist <= dist.min())[0])
    return idx, d2[:, 0]


def seed_matches(descP: Descriptors, descQ: Descriptors) -> list[SeedMatch]:
    """Descriptor-space NN of every valid data point, best first."""
    pv = np.flatnonzero(descP.valid)
    qv = np.flatnonzero(descQ.valid)
    if len(pv) == 0 or len(qv) == 0:
        raise NoValidDescriptors("both clouds need at least one non-null descriptor")
    nn, _ = _nn_descriptor(descP.values[pv], descQ.values[qv])
    model = qv[nn]
    dist = np.linalg.norm(descP.values[pv] - descQ.values[model], axis=1)
    order = np.lexsort((pv, dist))
    return [SeedMatch(int(pv[i]), int(model[i]), float(dist[i])) for i in order]


def default_thresholds(
    seeds: list[SeedMatch],
    resolution: float,
    radius: float,
    d_factor: float = 3.0,
    normal_angle_deg: float = 20.0,
    length_factor: float = 3.0,
) -> PropagationThresholds:
    med = float(np.median([s.d_distance for s in seeds])) if seeds else 0.0
    return PropagationThresholds(
        d_threshold=max(d_factor * med, 1e-12),
        normal_angle=math.radians(normal_angle_deg),
        length_tol=length_factor * resolution,
        radius=radius,
    )


class NeighborGraph(NamedTuple):
    """Fixed-radius neighbour lists in CSR form (self excluded)."""

    indptr: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def gather(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(owner, neighbor)`` for every neighbour of every row in ``rows``."""
        return _ragged_gather(self.indptr[rows], self.indptr[rows + 1] - self.indptr[rows], self.indices)


def _ragged_gather(starts: np.ndarray, counts: np.ndarray, values: np.ndarray):
    owner = np.repeat(np.arange(len(counts)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, values[np.repeat(starts, counts) + offsets]


def neighbor_graph(points: np.ndarray, radius: float) -> NeighborGraph:
    points = as_cloud(points)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((cols, rows))
    indptr = np.zeros(len(points) + 1, dtype=np.intp)
    np.cumsum(np.bincount(rows, minlength=len(points)), out=indptr[1:])
    return NeighborGraph(indptr, cols[order].astype(np.intp))


def propagate(
    seed: SeedMatch,
    Pd,
    Qd,
    descP: Descriptors,
    descQ: Descriptors,
    thresholds: PropagationThresholds,
    p_graph: NeighborGraph | None = None,
    q_graph: NeighborGraph | None = None,
    q_tree: cKDTree | None = None,
) -> MatchSet:
    """Grow a seed match into a set of matches by spatial region growing.

    Growth proceeds in waves. For every pair ``(y, x)`` accepted in the last
    wave, each unmatched data neighbour ``y'`` of ``y`` is tried against each
    model neighbour ``x'`` of ``x``. A candidate survives when

    * its descriptor distance is below ``d_threshold``,
    * ``|y'-y|`` matches ``|x'-x|`` and ``|y'-y0|`` matches ``|x'-x0|``
      (``(y0, x0)`` the seed) within ``length_tol``,
    * normals agree up to sign: before a rotation estimate exists, the angle
      of ``n(y')`` to ``n(y)`` must match that of ``n(x')`` to ``n(x)``;
      afterwards ``R_hat n(y')`` must lie within ``normal_angle`` of
      ``n(x')``.

    Each data point keeps its lowest-cost surviving partner and is matched
    at most once. ``R_hat`` is refit from all matches whenever the set has
    grown by half since the last fit. Once it exists, model candidates are
    looked up around the predicted position ``R_hat y' + t_hat`` instead,
    and must lie within ``length_tol`` of it.
    """
    Pd = as_cloud(Pd)
    Qd = as_cloud(Qd)
    th = thresholds
    p_graph = p_graph if p_graph is not None else neighbor_graph(Pd, th.radius)
    q_graph = q_graph if q_graph is not None else neighbor_graph(Qd, th.radius + th.length_tol)
    q_tree = q_tree if q_tree is not None else cKDTree(Qd)
    NP, NQ = descP.normals, descQ.normals
    DP, DQ = descP.values, descQ.values
    cos_n = math.cos(th.normal_angle)

    y0, x0 = seed.data_idx, seed.model_idx
    matched = np.full(len(Pd), -1, dtype=np.intp)
    matched[y0] = x0
    ys, xs = [np.array([y0])], [np.array([x0])]
    fy, fx = ys[0], xs[0]
    n_matched = 1
    visited = 0
    R_hat = t_hat = None
    fitted_at = 0

    while len(fy):
        visited += len(fy)
        own_p, cy = p_graph.gather(fy)
        keep = (matched[cy] < 0) & descP.valid[cy]
        own_p, cy = own_p[keep], cy[keep]
        # a data point reached from several frontier pairs is expanded from the first only
        cy, first_seen = np.unique(cy, return_index=True)
        own_p = own_p[first_seen]
        if len(cy) == 0:
            break

        if R_hat is None:
            # pair every data candidate with every model neighbour of its frontier partner
            own_q, cx = q_graph.gather(fx)
            keep = descQ.valid[cx]
            own_q, cx = own_q[keep], cx[keep]
            q_counts = np.bincount(own_q, minlength=len(fx))
            q_starts = np.cumsum(q_counts) - q_counts
            rep, ix = _ragged_gather(q_starts[own_p], q_counts[own_p], np.arange(len(cx)))
            a = own_p[rep]
            cand_y, cand_x = cy[rep], cx[ix]
        else:
            # only model points near the predicted position can pass the drift gate
            hits = q_tree.query_ball_point(Pd[cy] @ R_hat.T + t_hat, th.length_tol)
            counts = np.fromiter((len(h) for h in hits), dtype=np.intp, count=len(hits))
            rep = np.repeat(np.arange(len(cy)), counts)
            cand_x = np.fromiter((j for h in hits for j in h), dtype=np.intp, count=int(counts.sum()))
            keep = descQ.valid[cand_x]
            rep, cand_x = rep[keep], cand_x[keep]
            a = own_p[rep]
            cand_y = cy[rep]
        visited += len(cy) + len(cand_x)
        if len(cand_y) == 0:
            break

        len_p = np.linalg.norm(Pd[cand_y] - Pd[fy[a]], axis=1)
        len_q = np.linalg.norm(Qd[cand_x] - Qd[fx[a]], axis=1)
        dlen = np.abs(len_p - len_q)
        dlen0 = np.abs(np.linalg.norm(Pd[cand_y] - Pd[y0], axis=1) - np.linalg.norm(Qd[cand_x] - Qd[x0], axis=1))
        dD = np.linalg.norm(DP[cand_y] - DQ[cand_x], axis=1)
        ok = (dlen < th.length_tol) & (dlen0 < th.length_tol) & (dD < th.d_threshold)
        cost = dlen / th.length_tol + dD / th.d_threshold
        if R_hat is not None:
            ok &= np.abs(np.einsum("ij,ij->i", NP[cand_y] @ R_hat.T, NQ[cand_x])) >= cos_n
            drift = np.linalg.norm(Pd[cand_y] @ R_hat.T + t_hat - Qd[cand_x], axis=1)
            ok &= drift < th.length_tol
            cost = cost + drift / th.length_tol
        else:
            ay = np.arccos(np.clip(np.abs(np.einsum("ij,ij->i", NP[cand_y], NP[fy[a]])), 0.0, 1.0))
            ax = np.arccos(np.clip(np.abs(np.einsum("ij,ij->i", NQ[cand_x], NQ[fx[a]])), 0.0, 1.0))
            ok &= np.abs(ay - ax) < th.normal_angle
        if not ok.any():
            break
        cand_y, cand_x, cost = cand_y[ok], cand_x[ok], cost[ok]
        order = np.lexsort((cand_x, cost, cand_y))
        cand_y, cand_x = cand_y[order], cand_x[order]
        first = np.ones(len(cand_y), dtype=bool)
        first[1:] = cand_y[1:] != cand_y[:-1]
        fy, fx = cand_y[first], cand_x[first]
        matched[fy] = fx
        ys.append(fy)
        xs.append(fx)
        n_matched += len(fy)

        if n_matched >= th.min_matches_for_rotation and n_matched >= 1.5 * fitted_at:
            all_y, all_x = np.concatenate(ys), np.concatenate(xs)
            try:
                fit = estimate_rigid_transform(Pd[all_y], Qd[all_x])
            except DegenerateConfiguration:
                continue
            R_hat, t_hat = fit.R, fit.t
            fitted_at = n_matched

    return MatchSet(np.concatenate(ys), np.concatenate(xs), seed, visited)


def ransac_consensus(
    source,
    target,
    iterations: int,
    inlier_tol: float,
    rng: np.random.Generator | int | None = None,
    min_consensus: int = 10,
):
    """Three-point RANSAC over paired rows of ``source`` and ``target``.

    Returns ``(inlier_mask, transform)`` with the transform re-fit on all
    inliers of the best hypothesis, or ``None`` when the best consensus has
    ``min_consensus`` or fewer members.
    """
    src = as_cloud(source)
    dst = as_cloud(target)
    k = len(src)
    if k <= min_consensus or k < 3:
        return None
    rng = np.random.default_rng(rng)
    picks = rng.integers(0, k, size=(iterations, 3))
    distinct = (picks[:, 0] != picks[:, 1]) & (picks[:, 0] != picks[:, 2]) & (picks[:, 1] != picks[:, 2])
    picks = picks[distinct]
    if len(picks) == 0:
        return None
    R, t = estimate_rigid_transforms_batch(src[picks], dst[picks])
    moved = np.einsum("bij,kj->bki", R, src) + t[:, None, :]
    res2 = np.sum((moved - dst[None]) ** 2, axis=2)
    counts = np.count_nonzero(res2 <= inlier_tol * inlier_tol, axis=1)
    best = int(np.argmax(counts))
    if counts[best] <= min_consensus:
        return None
    inliers = res2[best] <= inlier_tol * inlier_tol
    try:
        T = estimate_rigid_transform(src[inliers], dst[inliers])
    except DegenerateConfiguration:
        return None
    return inliers, T


def quality(T: RigidTransform, P, Q_index: SpatialIndex, params: TricpParams) -> float:
    """``psi`` after one trimmed correspondence pass (lower is better)."""
    return evaluate_alignment(P, Q_index, T, params)[3]


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class PairwiseConfig:
    delta: float = 0.3
    full_propagation: bool = False
    full_propagation_fallback: bool = False
    descriptor_freq: int = 100
    model_descriptor_freq: int | None = None
    icp_freq: int = 10
    radius_multipliers: tuple = DEFAULT_RADIUS_MULTIPLIERS
    ransac_iterations: int = 1000
    ransac_seed: int = 0
    inlier_factor: float = 3.0
    min_consensus: int = 10
    d_factor: float = 3.0
    normal_angle_deg: float = 20.0
    length_factor: float = 3.0
    propagation_factor: float | None = None
    min_points: int = 100
    refine_full_resolution: bool = True
    tricp: TricpParams = field(default_factory=TricpParams)

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.descriptor_freq < 1 or self.icp_freq < 1 or self.match_freq < 1:
            raise ValueError("downsampling frequencies must be >= 1")
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")

    @property
    def match_freq(self) -> int:
        """Downsampling frequency of the model-side descriptor tier."""
        return self.model_descriptor_freq or self.descriptor_freq


class PreparedCloud:
    """A cloud at its working resolutions plus descriptors.

    ``points`` is full resolution and ``icp_points`` feeds the quality
    function and coarse refinement. Descriptors exist on two tiers: the
    sparse seed tier (``seed_points``), used when the cloud plays the data
    role, and the denser match tier (``desc_points``), used when it plays
    the model role. A denser model tier keeps the true partner of each data
    point close by, which is what makes seeds and propagation reliable.
    Indices and neighbour graphs are built lazily.
    """

    def __init__(
        self,
        points,
        desc_points,
        descriptors: Descriptors,
        seed_points=None,
        seed_descriptors: Descriptors | None = None,
        icp_points=None,
        icp_freq: int = 10,
    ):
        self.points = as_cloud(points)
        self.desc_points = as_cloud(desc_points)
        self.descriptors = descriptors
        if seed_points is None:
            self.seed_points, self.seed_descriptors = self.desc_points, descriptors
        else:
            self.seed_points, self.seed_descriptors = as_cloud(seed_points), seed_descriptors
        self.icp_points = downsample(self.points, icp_freq) if icp_points is None else as_cloud(icp_points)
        self._index = None
        self._icp_index = None
        self._resolution = None
        self._seed_resolution = None
        self._graphs = {}

    @classmethod
    def from_points(cls, points, scales: ScaleSet, config: PairwiseConfig) -> PreparedCloud:
        points = as_cloud(points)
        index = SpatialIndex(points)
        dense_freq = config.match_freq
        desc_points = downsample(points, dense_freq)
        desc = compute_all(desc_points, scales, support=index)
        if config.descriptor_freq % dense_freq == 0:
            stride = config.descriptor_freq // dense_freq
            rows = np.arange(0, len(desc_points), stride)
            seed_points, seed_desc = desc_points[rows], desc.take(rows)
        else:
            seed_points = downsample(points, config.descriptor_freq)
            seed_desc = compute_all(seed_points, scales, support=index)
        out = cls(points, desc_points, desc, seed_points, seed_desc, icp_freq=config.icp_freq)
        out._index = index
        return out

    @property
    def index(self) -> SpatialIndex:
        if self._index is None:
            self._index = SpatialIndex(self.points)
        return self._index

    @property
    def icp_index(self) -> SpatialIndex:
        if self._icp_index is None:
            self._icp_index = SpatialIndex(self.icp_points)
        return self._icp_index

    @property
    def resolution(self) -> float:
        if self._resolution is None:
            self._resolution = estimate_resolution(self.points)
        return self._resolution

    @property
    def seed_resolution(self) -> float:
        if self._seed_resolution is None:
            self._seed_resolution = estimate_resolution(self.seed_points)
        return self._seed_resolution

    def seed_graph(self, radius: float) -> NeighborGraph:
        key = ("seed", radius)
        if key not in self._graphs:
            self._graphs[key] = neighbor_graph(self.seed_points, radius)
        return self._graphs[key]

    @property
    def match_tree(self) -> cKDTree:
        if "tree" not in self._graphs:
            self._graphs["tree"] = cKDTree(self.desc_points)
        return self._graphs["tree"]

    def match_graph(self, radius: float) -> NeighborGraph:
        key = ("match", radius)
        if key not in self._graphs:
            self._graphs[key] = neighbor_graph(self.desc_points, radius)
        return self._graphs[key]


def default_scales(model_points, config: PairwiseConfig) -> ScaleSet:
    return ScaleSet.from_resolution(estimate_resolution(model_points), config.radius_multipliers)


def _n_propagations(n_seeds: int, delta: float, full: bool) -> int:
    if full:
        return n_seeds
    return min(n_seeds, math.ceil(delta * n_seeds - 1e-9))


def register_pair(
    P,
    Q,
    config: PairwiseConfig | None = None,
    scales: ScaleSet | None = None,
    data: PreparedCloud | None = None,
    model: PreparedCloud | None = None,
) -> PairwiseResult:
    """Align data cloud ``P`` to model cloud ``Q`` without an initial guess.

    Prepared caches can be passed for either side to skip downsampling and
    descriptor computation (the multi-view loop keeps the model's). ``scales``
    must match the scales the caches were built with.

    Raises:
        NoAlignment: no propagated seed reached a consensus above
            ``min_consensus``.
    """
    config = config or PairwiseConfig()
    stats = PairwiseStats()
    t_start = time.perf_counter()
    if model is None:
        Q = as_cloud(Q)
        if len(Q) < config.min_points:
            raise ValueError(f"model has {len(Q)} points, need {config.min_points}")
        scales = scales or default_scales(Q, config)
        model = PreparedCloud.from_points(Q, scales, config)
    if data is None:
        P = as_cloud(P)
        if len(P) < config.min_points:
            raise ValueError(f"data has {len(P)} points, need {config.min_points}")
        scales = scales or default_scales(model.points, config)
        data = PreparedCloud.from_points(P, scales, config)
    stats.timings["prepare"] = time.perf_counter() - t_start

    t0 = time.perf_counter()
    seeds = seed_matches(data.seed_descriptors, model.descriptors)
    stats.seeds_total = len(seeds)
    d_o = model.resolution
    radius = config.propagation_factor * d_o if config.propagation_factor else scales.largest
    th = default_thresholds(seeds, d_o, radius, config.d_factor, config.normal_angle_deg, config.length_factor)
    p_graph = data.seed_graph(radius)
    q_graph = model.match_graph(radius + th.length_tol)
    inlier_tol = config.inlier_factor * d_o

    candidates: list[tuple[int, RigidTransform]] = []

    def run(ranks):
        for rank in ranks:
            ms = propagate(
                seeds[rank],
                data.seed_points,
                model.desc_points,
                data.seed_descriptors,
                model.descriptors,
                th,
                p_graph,
                q_graph,
                model.match_tree,
            )
            stats.seeds_propagated += 1
            stats.match_set_sizes.append(len(ms))
            stats.visited_nodes.append(ms.visited)
            if len(ms) <= config.min_consensus:
                continue
            stats.ransac_runs += 1
            out = ransac_consensus(
                data.seed_points[ms.data_idx],
                model.desc_points[ms.model_idx],
                config.ransac_iterations,
                inlier_tol,
                np.random.default_rng([config.ransac_seed, rank]),
                config.min_consensus,
            )
            if out is None:
                continue
            inliers, T = out
            stats.consensus_sizes.append(int(inliers.sum()))
            candidates.append((rank, T))

    n_prop = _n_propagations(len(seeds), config.delta, config.full_propagation)
    run(range(n_prop))
    if not candidates and config.full_propagation_fallback and n_prop < len(seeds):
        run(range(n_prop, len(seeds)))
    stats.timings["propagation"] = time.perf_counter() - t0
    stats.candidates = len(candidates)
    if not candidates:
        raise NoAlignment(f"none of {stats.seeds_propagated} propagated seeds reached consensus")

    t0 = time.perf_counter()
    scores = [quality(T, data.icp_points, model.index, config.tricp) for _, T in candidates]
    best = int(np.argmin(scores))
    T_best = candidates[best][1]
    stats.timings["quality"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = trimmed_icp(data.icp_points, model.index, T_best, config.tricp)
    stats.icp_iterations = result.iterations
    if config.refine_full_resolution:
        result = trimmed_icp(data.points, model.index, result.transform, config.tricp)
        stats.icp_iterations += result.iterations
    stats.timings["refine"] = time.perf_counter() - t0
    stats.timings["total"] = time.perf_counter() - t_start
    result.stats = stats
    return result
