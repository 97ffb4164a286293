"""Ground truth handling, keyframe selection, error metrics and
similarity-threshold sweeps."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Pose, quat_slerp
from .errors import EmptyTrajectory, OutOfSpan


# ---------------------------------------------------------------------------
# ground truth


class GroundTruth:
    """Time-sorted camera-to-world poses with interpolation."""

    def __init__(self, timestamps: Sequence[float], poses: Sequence[Pose], synthesized_orientation: bool = False):
        t = np.asarray(timestamps, dtype=float)
        if len(t) == 0:
            raise EmptyTrajectory("ground truth has no samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("ground-truth timestamps must be strictly increasing")
        self.timestamps = t
        self.poses = list(poses)
        self.synthesized_orientation = synthesized_orientation

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def pose_at(self, t: float) -> Pose:
        """Translation lerp and rotation slerp between the bracketing samples."""
        lo, hi = self.span
        if not lo <= t <= hi:
            raise OutOfSpan(f"time {t} outside ground-truth span [{lo}, {hi}]")
        k = int(np.searchsorted(self.timestamps, t, side="right")) - 1
        if k >= len(self) - 1 or self.timestamps[k] == t:
            return self.poses[min(k, len(self) - 1)]
        t0, t1 = self.timestamps[k], self.timestamps[k + 1]
        u = (t - t0) / (t1 - t0)
        a, b = self.poses[k], self.poses[k + 1]
        return Pose(quat_slerp(a.rotation, b.rotation, u), (1 - u) * a.translation + u * b.translation)

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        """Read ``timestamp tx ty tz [qx qy qz qw]`` lines; '#' starts a comment.

        Position-only files get their orientation from the direction of
        travel (yaw about +z, camera looking along the heading).
        """
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(x) for x in line.replace(",", " ").split()])
        if not rows:
            raise EmptyTrajectory(f"{path}: no ground-truth samples")
        widths = {len(r) for r in rows}
        if widths == {8}:
            a = np.array(rows)
            return cls(a[:, 0], [Pose(r[4:8], r[1:4]) for r in a])
        if widths == {4}:
            a = np.array(rows)
            return cls(a[:, 0], heading_poses(a[:, 1:4]), synthesized_orientation=True)
        raise ValueError(f"{path}: expected 4 or 8 columns per line, got {sorted(widths)}")

    def save(self, path: str | Path) -> None:
        lines = ["# timestamp tx ty tz qx qy qz qw"]
        for t, p in zip(self.timestamps, self.poses):
            vals = [t, *p.translation, *p.rotation]
            lines.append(" ".join(f"{v:.10g}" for v in vals))
        Path(path).write_text("\n".join(lines) + "\n")


def camera_rotation(heading: float) -> np.ndarray:
    """Camera-to-world rotation for a forward-looking camera (x right, y down, z forward)
    on a vehicle with yaw ``heading`` in a z-up world."""
    c, s = math.cos(heading), math.sin(heading)
    forward = [c, s, 0.0]
    right = [s, -c, 0.0]
    down = [0.0, 0.0, -1.0]
    return np.column_stack([right, down, forward])


def heading_poses(positions: np.ndarray) -> list[Pose]:
    p = np.asarray(positions, dtype=float)
    if len(p) == 1:
        return [Pose.from_matrix(camera_rotation(0.0), p[0])]
    d = np.gradient(p[:, :2], axis=0)
    yaw = np.arctan2(d[:, 1], d[:, 0])
    return [Pose.from_matrix(camera_rotation(h), x) for h, x in zip(yaw, p)]


def gt_relative_pose(gt: GroundTruth, t_query: float, t_match: float) -> Pose:
    """Pose of the query camera expressed in the matched camera's frame."""
    return gt.pose_at(t_match).inverse().compose(gt.pose_at(t_query))


# ---------------------------------------------------------------------------
# keyframes


def select_keyframes(poses: Sequence[Pose], min_translation: float = 0.5, min_rotation_deg: float = 10.0) -> list[int]:
    """Indices of keyframes: the first pose, then whenever the motion since
    the last keyframe reaches ``min_translation`` metres or
    ``min_rotation_deg`` degrees."""
    if len(poses) == 0:
        raise EmptyTrajectory("no poses to select keyframes from")
    keep = [0]
    last = poses[0]
    min_rot = math.radians(min_rotation_deg)
    for i in range(1, len(poses)):
        p = poses[i]
        # tiny slack so exact multiples of the step are not lost to rounding
        moved = float(np.linalg.norm(p.translation - last.translation)) >= min_translation - 1e-9
        turned = last.inverse().compose(p).rotation_angle() >= min_rot - 1e-9
        if moved or turned:
            keep.append(i)
            last = p
    return keep


# ---------------------------------------------------------------------------
# error metrics


@dataclass
class DetectionError:
    query_id: int
    match_id: int
    query_ts: float
    match_ts: float
    predicted: list[float] | None = None
    ground_truth: list[float] | None = None
    translation_error: float | None = None
    magnitude_error: float | None = None
    loop_distance: float | None = None
    error: str | None = None


def summarize(values: Iterable[float]) -> dict:
    v = np.sort(np.asarray([x for x in values if x is not None], dtype=float))
    if len(v) == 0:
        return {"count": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "count": int(len(v)),
        "min": float(v[0]),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(v[-1]),
        "mean": float(v.mean()),
    }


@dataclass
class EvaluationReport:
    records: list[DetectionError]
    summary: dict = field(default_factory=dict)
    synthesized_orientation: bool = False

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "summary": self.summary,
            "synthesized_orientation": self.synthesized_orientation,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def evaluate(detections, gt: GroundTruth) -> EvaluationReport:
    """Per-detection relative-translation errors against ground truth.

    ``translation_error`` is ``|t_est - t_gt|``; ``magnitude_error`` is
    ``| |t_est| - |t_gt| |``; ``loop_distance`` is ``|t_gt|``.  Detections
    outside the ground-truth span are kept with an error note.
    """
    records = []
    for d in detections:
        q_ts, m_ts = _get(d, "query_ts"), _get(d, "match_ts")
        rec = DetectionError(_get(d, "query_id"), _get(d, "match_id"), q_ts, m_ts)
        try:
            rel = gt_relative_pose(gt, q_ts, m_ts)
        except OutOfSpan as exc:
            rec.error = str(exc)
            records.append(rec)
            continue
        t_est = np.asarray(d.pose.translation, dtype=float)
        t_gt = rel.translation
        rec.predicted = [float(x) for x in t_est]
        rec.ground_truth = [float(x) for x in t_gt]
        rec.translation_error = float(np.linalg.norm(t_est - t_gt))
        rec.magnitude_error = float(abs(np.linalg.norm(t_est) - np.linalg.norm(t_gt)))
        rec.loop_distance = float(np.linalg.norm(t_gt))
        records.append(rec)
    summary = {
        "translation_error": summarize(r.translation_error for r in records),
        "magnitude_error": summarize(r.magnitude_error for r in records),
        "loop_distance": summarize(r.loop_distance for r in records),
        "out_of_span": sum(r.error is not None for r in records),
    }
    return EvaluationReport(records, summary, gt.synthesized_orientation)


def _get(d, name):
    if hasattr(d, name):
        return getattr(d, name)
    # LoopDetection objects carry FrameIds
    if name.startswith("query"):
        fid = d.query
    else:
        fid = d.match
    return fid.index if name.endswith("_id") else fid.timestamp


# ---------------------------------------------------------------------------
# threshold sweeps


@dataclass(frozen=True)
class ScoredPair:
    i: int
    j: int
    score: float
    distance: float


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    count: int
    min: float | None
    q1: float | None
    median: float | None
    q3: float | None
    max: float | None


def pairwise_scores(bows, timestamps, positions, exclusion: float, scorer) -> list[ScoredPair]:
    """Score every keyframe pair at least ``exclusion`` seconds apart."""
    ts = np.asarray(timestamps, dtype=float)
    pos = np.asarray(positions, dtype=float)
    out = []
    for j in range(len(bows)):
        for i in range(j):
            if ts[j] - ts[i] >= exclusion:
                out.append(ScoredPair(i, j, scorer(bows[i], bows[j]), float(np.linalg.norm(pos[j] - pos[i]))))
    return out


def threshold_sweep(pairs: Sequence[ScoredPair], thresholds: Sequence[float]) -> list[SweepRow]:
    """Distribution of ground-truth distances of pairs scoring at or above each threshold."""
    scores = np.array([p.score for p in pairs], dtype=float)
    dists = np.array([p.distance for p in pairs], dtype=float)
    rows = []
    for th in thresholds:
        sel = dists[scores >= th]
        if len(sel) == 0:
            rows.append(SweepRow(float(th), 0, None, None, None, None, None))
            continue
        q1, med, q3 = np.percentile(sel, [25, 50, 75])
        rows.append(SweepRow(float(th), int(len(sel)), float(sel.min()), float(q1), float(med), float(q3), float(sel.max())))
    return rows
