"""Competition scoring: one point per direction estimated within 10 degrees.

Static tasks score one direction per recording; flight tasks score 15
timestamps per recording. Missing or non-finite estimates score 0.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure, TaskKindMismatch
from .geometry import Direction, great_circle_distance

log = logging.getLogger(__name__)

THRESHOLD_DEG = 10.0
TIMESTAMPS_PER_FLIGHT = 15
TASK_KINDS = ("static", "flight")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Reference directions.

    static: ``records[id] = Direction``; flight: ``records[id] = [(t, Direction)] * 15``.
    """

    kind: str
    records: dict

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskKindMismatch(f"unknown task kind {self.kind!r}")
        if self.kind == "flight":
            for rid, rows in self.records.items():
                if len(rows) != TIMESTAMPS_PER_FLIGHT:
                    raise ValueError(f"{rid}: flight records need {TIMESTAMPS_PER_FLIGHT} timestamps, got {len(rows)}")
                times = [t for t, _ in rows]
                if any(b <= a for a, b in zip(times, times[1:])):
                    raise ValueError(f"{rid}: timestamps must be strictly increasing")

    @property
    def max_points(self) -> int:
        per = 1 if self.kind == "static" else TIMESTAMPS_PER_FLIGHT
        return per * len(self.records)


@dataclass(frozen=True, eq=False)
class Submission:
    """Estimated directions; static: id -> Direction, flight: id -> {index: Direction}.

    Entries may be missing or ``None``.
    """

    kind: str
    records: dict

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskKindMismatch(f"unknown task kind {self.kind!r}")


@dataclass
class ScoreReport:
    kind: str
    points: dict
    errors: dict
    total: int
    max_points: int
    failed: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.total / self.max_points if self.max_points else 0.0

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {
            "kind": self.kind,
            "total": self.total,
            "max": self.max_points,
            "rate": self.rate,
            "points": {k: clean(v) for k, v in sorted(self.points.items())},
            "errors_deg": {k: clean(v) for k, v in sorted(self.errors.items())},
            "failed": sorted(self.failed),
        }


def is_correct(estimate: Direction | None, truth: Direction) -> bool:
    """True iff the great-circle error is strictly below 10 degrees."""
    if estimate is None:
        return False
    return great_circle_distance(estimate, truth) < THRESHOLD_DEG


def _error(estimate, truth: Direction) -> float:
    if estimate is None:
        return float("nan")
    return great_circle_distance(estimate, truth)


def score_static(sub: Submission, gt: GroundTruth) -> ScoreReport:
    if gt.kind != "static" or sub.kind != "static":
        raise TaskKindMismatch(f"static scoring needs static inputs, got {sub.kind}/{gt.kind}")
    points, errors = {}, {}
    for rid, truth in gt.records.items():
        est = sub.records.get(rid)
        errors[rid] = _error(est, truth)
        points[rid] = int(is_correct(est, truth))
    return ScoreReport("static", points, errors, sum(points.values()), gt.max_points)


def score_flight(sub: Submission, gt: GroundTruth) -> ScoreReport:
    if gt.kind != "flight" or sub.kind != "flight":
        raise TaskKindMismatch(f"flight scoring needs flight inputs, got {sub.kind}/{gt.kind}")
    points, errors = {}, {}
    for rid, rows in gt.records.items():
        est = sub.records.get(rid) or {}
        errs = [_error(est.get(k), truth) for k, (_, truth) in enumerate(rows)]
        errors[rid] = errs
        points[rid] = sum(int(is_correct(est.get(k), truth)) for k, (_, truth) in enumerate(rows))
    return ScoreReport("flight", points, errors, sum(points.values()), gt.max_points)


def score(sub: Submission, gt: GroundTruth) -> ScoreReport:
    if sub.kind != gt.kind:
        raise TaskKindMismatch(f"{sub.kind} submission against {gt.kind} ground truth")
    return score_static(sub, gt) if gt.kind == "static" else score_flight(sub, gt)


@dataclass
class FileDiagnostic:
    recording_id: str
    seconds: float
    error: str | None = None
    method: str | None = None


def evaluate_pipeline(dataset, config=None, submission_path=None, threads: int = 1,
                      oracle_noise: bool = False):
    """Run a pipeline over every recording of a dataset directory and score it.

    Failures on individual files are logged, recorded in the diagnostics and
    scored as missing; the run continues. Returns ``(report, diagnostics)``.
    """
    from . import io as dio
    from .config import PipelineConfig
    from .pipeline import localize_file

    root = Path(dataset)
    if not root.is_dir():
        raise IoFailure(f"dataset directory {root} not found")
    gt = dio.read_ground_truth(root / "ground_truth.csv")
    geom = dio.read_geometry(root / "geometry.txt")
    speeds_path = root / "motor_speeds.csv"
    speeds = dio.read_motor_speeds(speeds_path) if speeds_path.exists() else {}
    templates_path = root / "motor_templates.csv"
    templates = dio.read_motor_templates(templates_path) if templates_path.exists() else None
    config = config or PipelineConfig()

    def run(rid):
        t0 = time.perf_counter()
        try:
            noise_path = root / "noise" / f"{rid}.wav" if oracle_noise else None
            times = [t for t, _ in gt.records[rid]] if gt.kind == "flight" else None
            est = localize_file(root / f"{rid}.wav", config, geom, gt.kind, motor_speeds=speeds.get(rid),
                                noise_path=noise_path, templates=templates, timestamps=times)
            return rid, est, FileDiagnostic(rid, time.perf_counter() - t0, method=config.method)
        except Exception as exc:  # per-file fault isolation
            log.warning("%s failed: %s", rid, exc)
            return rid, None, FileDiagnostic(rid, time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")

    ids = sorted(gt.records)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ids))
    else:
        results = [run(rid) for rid in ids]
    records = {rid: est for rid, est, _ in results if est is not None}
    sub = Submission(gt.kind, records)
    if submission_path is not None:
        dio.write_submission(sub, submission_path)
    report = score(sub, gt)
    diagnostics = {rid: diag for rid, _, diag in results}
    report.failed = [rid for rid, d in diagnostics.items() if d.error is not None]
    return report, diagnostics


def mean_error(report: ScoreReport) -> float:
    vals = []
    for v in report.errors.values():
        vals.extend(v if isinstance(v, list) else [v])
    vals = np.array(vals, dtype=float)
    return float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
