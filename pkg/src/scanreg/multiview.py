"""Multi-view registration of unordered scans against a growing model.

The reference scan seeds the model. Every pass tries each pending scan
against the current model; a result that passes the reliability rule is
fused into the model and the scan is removed from the pending list. A pass
that places nothing ends the session as stalled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .augmentation import AugmentationRecord, augment_model
from .descriptors import ScaleSet
from .errors import DegenerateConfiguration, NoAlignment, RegistrationStalled
from .geometry import RigidTransform
from .pairwise import PairwiseConfig, PreparedCloud, default_scales, register_pair
from .reliability import ReliabilityState, is_reliable, record_reliable, update_resolution
from .spatial import as_cloud, estimate_resolution


@dataclass
class MultiviewConfig:
    pairwise: PairwiseConfig = field(default_factory=PairwiseConfig)
    reference: int = 0
    rude_augmentation: bool = False
    desc_gate_factor: float = 3.0

    def __post_init__(self):
        if self.reference < 0:
            raise ValueError("reference index must be non-negative")
        if self.desc_gate_factor <= 0:
            raise ValueError("desc_gate_factor must be positive")


@dataclass
class Attempt:
    """One pairwise registration of a pending scan against the model."""

    scan: int
    pass_index: int
    reliable: bool
    tmse: float | None = None
    threshold: float | None = None
    xi: float | None = None
    psi: float | None = None
    failure: str | None = None
    seconds: float = 0.0
    augmentation: AugmentationRecord | None = None


@dataclass
class ScanRecord:
    scan: int
    transform: RigidTransform
    tmse: float
    pass_index: int


@dataclass
class MultiviewResult:
    transforms: list[RigidTransform | None]
    records: list[ScanRecord]
    model: PreparedCloud
    reference: int
    stalled: bool
    unplaced: list[int]
    passes: int
    attempts: list[Attempt]
    timings: dict = field(default_factory=dict)

    @property
    def pairwise_calls(self) -> int:
        return len(self.attempts)

    @property
    def reliable_count(self) -> int:
        return sum(a.reliable for a in self.attempts)


def register_all(scans, config: MultiviewConfig | None = None, scales: ScaleSet | None = None) -> MultiviewResult:
    """Register every scan into the frame of the reference scan.

    Each scan is registered directly against the model, which lives in the
    reference frame, so accepted transforms need no chaining.

    Raises:
        RegistrationStalled: a pass placed no scan while some remain
            pending; ``err.result`` carries the partial result.
    """
    config = config or MultiviewConfig()
    pw = config.pairwise
    scans = [as_cloud(s) for s in scans]
    n = len(scans)
    if n < 2:
        raise ValueError("need at least two scans")
    if not 0 <= config.reference < n:
        raise ValueError(f"reference index {config.reference} out of range for {n} scans")
    for i, s in enumerate(scans):
        if len(s) < pw.min_points:
            raise ValueError(f"scan {i} has {len(s)} points, need {pw.min_points}")

    timings = {"prepare": 0.0, "pairwise": 0.0, "augment": 0.0}
    t_start = time.perf_counter()
    ref = config.reference
    scales = scales or default_scales(scans[ref], pw)
    prepared: dict[int, PreparedCloud] = {}

    def prepare(i: int) -> PreparedCloud:
        if i not in prepared:
            t0 = time.perf_counter()
            prepared[i] = PreparedCloud.from_points(scans[i], scales, pw)
            timings["prepare"] += time.perf_counter() - t0
        return prepared[i]

    model = prepare(ref)
    state = ReliabilityState(d_o=estimate_resolution(model.points))
    transforms: list[RigidTransform | None] = [None] * n
    transforms[ref] = RigidTransform.identity()
    records = [ScanRecord(ref, transforms[ref], 0.0, 0)]
    attempts: list[Attempt] = []
    pending = [i for i in range(n) if i != ref]
    passes = 0
    stalled = False

    while pending:
        passes += 1
        placed = 0
        for i in list(pending):
            data = prepare(i)
            t0 = time.perf_counter()
            try:
                res = register_pair(None, None, pw, scales, data=data, model=model)
            except (NoAlignment, DegenerateConfiguration) as err:
                attempts.append(Attempt(i, passes, False, failure=str(err), seconds=time.perf_counter() - t0))
                timings["pairwise"] += time.perf_counter() - t0
                continue
            timings["pairwise"] += time.perf_counter() - t0
            threshold = state.threshold
            ok = is_reliable(res.tmse, state)
            attempt = Attempt(i, passes, ok, res.tmse, threshold, res.xi, res.psi, seconds=time.perf_counter() - t0)
            attempts.append(attempt)
            if not ok:
                continue

            t0 = time.perf_counter()
            corr = res.correspondences if pw.refine_full_resolution else None
            model, attempt.augmentation = augment_model(
                model,
                data,
                res.transform,
                corr,
                rude=config.rude_augmentation,
                tricp=pw.tricp,
                desc_gate_factor=config.desc_gate_factor,
                icp_freq=pw.icp_freq,
            )
            state = update_resolution(record_reliable(state, res.tmse), model.points)
            timings["augment"] += time.perf_counter() - t0
            transforms[i] = res.transform
            records.append(ScanRecord(i, res.transform, res.tmse, passes))
            pending.remove(i)
            placed += 1
        if placed == 0:
            stalled = True
            break

    timings["total"] = time.perf_counter() - t_start
    records.sort(key=lambda r: r.scan)
    result = MultiviewResult(transforms, records, model, ref, stalled, sorted(pending), passes, attempts, timings)
    if stalled:
        raise RegistrationStalled(f"no scan placed in pass {passes}; unplaced: {sorted(pending)}", result)
    return result


def session_report(result: MultiviewResult) -> dict:
    """Plain-data summary of a finished or stalled session."""
    per_pass: dict[int, dict] = {}
    for a in result.attempts:
        entry = per_pass.setdefault(a.pass_index, {"pass": a.pass_index, "attempts": 0, "placed": 0})
        entry["attempts"] += 1
        entry["placed"] += int(a.reliable)
    status = {}
    for i, T in enumerate(result.transforms):
        if i == result.reference:
            status[i] = "reference"
        else:
            status[i] = "placed" if T is not None else "unplaced"
    return {
        "n_scans": len(result.transforms),
        "reference": result.reference,
        "stalled": result.stalled,
        "unplaced": list(result.unplaced),
        "passes": result.passes,
        "pairwise_calls": result.pairwise_calls,
        "reliable_registrations": result.reliable_count,
        "model_points": len(result.model.points),
        "scans": [{"scan": i, "status": s} for i, s in status.items()],
        "per_pass": [per_pass[k] for k in sorted(per_pass)],
        "tmse_history": [
            {"scan": a.scan, "pass": a.pass_index, "tmse": a.tmse, "threshold": a.threshold, "reliable": a.reliable}
            for a in result.attempts
            if a.tmse is not None
        ],
        "failures": [{"scan": a.scan, "pass": a.pass_index, "reason": a.failure} for a in result.attempts if a.failure],
        "timings": {k: round(v, 6) for k, v in result.timings.items()},
    }
