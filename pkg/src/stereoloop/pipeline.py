"""Frame-by-frame loop detection.

``LoopDetector.process`` runs retrieval, island ranking, the temporal gate,
four-image matching, candidate triangulation with the depth window and
robust PnP.  Every processed frame is added to the database afterwards,
whatever the outcome.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import CameraCalibration, FrameId, PipelineConfig, Pose
from .database import LoopDatabase, group_islands, rank_islands, select_candidate, temporal_consistency
from .errors import LengthMismatch, StereoLoopError
from .features import describe, detect
from .pnp import pnp_ransac
from .stereo import cross_match_arrays, depth_window_mask, stereo_match_arrays, triangulate_points
from .vocabulary import BowVector, VocabularyTree

log = logging.getLogger(__name__)

DETECTION_COLUMNS = [
    "query_id", "query_ts", "match_id", "match_ts",
    "tx", "ty", "tz", "qx", "qy", "qz", "qw",
    "inliers", "eta", "H",
]
REJECTION_COLUMNS = ["query_id", "query_ts", "reason", "stereo", "candidates", "cross", "depth", "inliers"]


class RejectionReason(str, enum.Enum):
    NO_CANDIDATES = "NoCandidates"
    BELOW_NORM_THRESHOLD = "BelowNormThreshold"
    TEMPORAL_INCONSISTENT = "TemporalInconsistent"
    TOO_FEW_CROSS_MATCHES = "TooFewCrossMatches"
    TOO_FEW_DEPTH_FILTERED = "TooFewDepthFiltered"
    PNP_FAILED = "PnPFailed"
    TOO_FEW_STEREO_FEATURES = "TooFewStereoFeatures"


@dataclass(frozen=True, eq=False)
class StereoObservation:
    """Stereo-matched features of one frame; row i of left and right correspond."""

    frame: FrameId
    left_uv: np.ndarray
    right_uv: np.ndarray
    left_desc: np.ndarray
    right_desc: np.ndarray
    bow: BowVector
    queryable: bool = True

    def __len__(self) -> int:
        return len(self.left_uv)

    @property
    def disparity(self) -> np.ndarray:
        return self.left_uv[:, 0] - self.right_uv[:, 0]


@dataclass(frozen=True)
class LoopDetection:
    query: FrameId
    match: FrameId
    pose: Pose  # query camera expressed in the matched camera frame
    inliers: int
    eta: float
    H: float
    island: tuple[float, float]
    counts: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        t, q = self.pose.translation, self.pose.rotation
        return [
            str(self.query.index), _fmt(self.query.timestamp), str(self.match.index), _fmt(self.match.timestamp),
            *(_fmt(x) for x in t), *(_fmt(x) for x in q),
            str(self.inliers), _fmt(self.eta), _fmt(self.H),
        ]


@dataclass(frozen=True)
class Rejection:
    query: FrameId
    reason: RejectionReason
    counts: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        c = self.counts
        return [str(self.query.index), _fmt(self.query.timestamp), self.reason.value] + [
            str(c.get(k, "")) for k in REJECTION_COLUMNS[3:]
        ]


def _fmt(x: float) -> str:
    return f"{float(x):.10g}"


class LoopDetector:
    """Stateful detector over one sequence of rectified stereo frames."""

    def __init__(self, vocabulary: VocabularyTree, calibration: CameraCalibration, cfg: PipelineConfig | None = None):
        self.vocabulary = vocabulary
        self.cal = calibration
        self.cfg = cfg or PipelineConfig()
        self.db = LoopDatabase(self.cfg)
        self.observations: dict[int, StereoObservation] = {}
        self._next_index = 0

    # -- ingestion ------------------------------------------------------

    def _frame_id(self, timestamp: float, index: int | None) -> FrameId:
        if index is None:
            index = self._next_index
        self._next_index = max(self._next_index, index + 1)
        return FrameId(int(index), float(timestamp))

    def ingest_features(self, left_uv, left_desc, right_uv, right_desc, timestamp: float, index: int | None = None) -> StereoObservation:
        """Stereo-match per-camera features and build the frame's BoW vector.

        The observation is flagged non-queryable when fewer than the
        feature floor survive stereo matching; it is still usable for
        :meth:`process`, which then only stores it.
        """
        left_uv = np.asarray(left_uv, dtype=float).reshape(-1, 2)
        right_uv = np.asarray(right_uv, dtype=float).reshape(-1, 2)
        li, ri, _, _ = stereo_match_arrays(left_uv, left_desc, right_uv, right_desc, self.cfg.matching)
        ld = np.asarray(left_desc, dtype=np.uint8).reshape(-1, 32)[li]
        rd = np.asarray(right_desc, dtype=np.uint8).reshape(-1, 32)[ri]
        bow = self.vocabulary.transform(ld)
        return StereoObservation(
            self._frame_id(timestamp, index), left_uv[li], right_uv[ri], ld, rd, bow, len(li) >= self.cfg.floor
        )

    def observe(self, left_uv, right_uv, left_desc, right_desc, timestamp: float, index: int | None = None, response=None) -> StereoObservation:
        """Build an observation from features that are already stereo-matched.

        Rows must correspond.  With ``response`` given, only the strongest
        ``n_feat`` rows are kept (ties by row order), like the detector's
        cap.  Rows with non-positive disparity are dropped.
        """
        left_uv = np.asarray(left_uv, dtype=float).reshape(-1, 2)
        right_uv = np.asarray(right_uv, dtype=float).reshape(-1, 2)
        ld = np.asarray(left_desc, dtype=np.uint8).reshape(-1, 32)
        rd = np.asarray(right_desc, dtype=np.uint8).reshape(-1, 32)
        if not len(left_uv) == len(right_uv) == len(ld) == len(rd):
            raise LengthMismatch("left and right feature arrays differ in length")
        rows = np.flatnonzero(left_uv[:, 0] - right_uv[:, 0] > 0)
        if response is not None and len(rows) > self.cfg.n_feat:
            r = np.asarray(response, dtype=float)[rows]
            rows = np.sort(rows[np.argsort(-r, kind="stable")[: self.cfg.n_feat]])
        elif len(rows) > self.cfg.n_feat:
            rows = rows[: self.cfg.n_feat]
        bow = self.vocabulary.transform(ld[rows])
        return StereoObservation(
            self._frame_id(timestamp, index), left_uv[rows], right_uv[rows], ld[rows], rd[rows], bow, len(rows) >= self.cfg.floor
        )

    def ingest(self, left_image, right_image, timestamp: float, index: int | None = None) -> StereoObservation:
        fc = self.cfg.features
        lk = detect(left_image, self.cfg.n_feat, fc)
        rk = detect(right_image, self.cfg.n_feat, fc)
        ld, rd = describe(left_image, lk, fc), describe(right_image, rk, fc)
        luv = np.array([kp.pt for kp in lk], dtype=float).reshape(-1, 2)
        ruv = np.array([kp.pt for kp in rk], dtype=float).reshape(-1, 2)
        return self.ingest_features(luv, ld, ruv, rd, timestamp, index)

    # -- detection ------------------------------------------------------

    def process(self, obs: StereoObservation) -> LoopDetection | Rejection:
        try:
            return self._verify(obs)
        finally:
            self.db.add(obs.frame.index, obs.bow, obs.frame.timestamp)
            self.observations[obs.frame.index] = obs

    def _verify(self, obs: StereoObservation) -> LoopDetection | Rejection:
        cfg, floor = self.cfg, self.cfg.floor
        counts = {"stereo": len(obs)}

        def reject(reason: RejectionReason) -> Rejection:
            return Rejection(obs.frame, reason, dict(counts))

        if len(self.db) == 0:
            self.db.record(obs.frame.index, None)
            return reject(RejectionReason.NO_CANDIDATES)
        if not obs.queryable:
            self.db.record(obs.frame.index, None)
            return reject(RejectionReason.TOO_FEW_STEREO_FEATURES)

        qr = self.db.query(obs.bow, obs.frame.timestamp)
        counts["candidates"] = len(qr.candidates)
        if not qr.candidates:
            self.db.record(obs.frame.index, None)
            if qr.abstained or qr.n_scored == 0:
                return reject(RejectionReason.NO_CANDIDATES)
            return reject(RejectionReason.BELOW_NORM_THRESHOLD)

        best = rank_islands(group_islands(qr.candidates, cfg.island_max_gap))[0]
        consistent = temporal_consistency(self.db.history, best, cfg.consistency_length, cfg.island_max_gap)
        self.db.record(obs.frame.index, best)
        if not consistent:
            return reject(RejectionReason.TEMPORAL_INCONSISTENT)

        chosen = select_candidate(best)
        cand = self.observations[chosen.frame]
        qi, ci, _ = cross_match_arrays(obs.left_desc, cand.left_desc, cfg.matching.max_hamming)
        counts["cross"] = len(qi)
        if len(qi) < floor:
            return reject(RejectionReason.TOO_FEW_CROSS_MATCHES)

        X = triangulate_points(cand.left_uv[ci], cand.disparity[ci], self.cal)
        keep = depth_window_mask(X[:, 2], cfg.depth_min, cfg.depth_max)
        X, pix = X[keep], obs.left_uv[qi[keep]]
        counts["depth"] = len(X)
        if len(X) < floor:
            return reject(RejectionReason.TOO_FEW_DEPTH_FILTERED)

        try:
            pose, inliers = pnp_ransac(X, pix, self.cal, cfg.ransac, floor, seed=[cfg.ransac.seed, obs.frame.index])
        except StereoLoopError as exc:
            log.debug("frame %d: PnP failed: %s", obs.frame.index, exc)
            return reject(RejectionReason.PNP_FAILED)
        counts["inliers"] = len(inliers)
        return LoopDetection(
            query=obs.frame,
            match=FrameId(chosen.frame, chosen.timestamp),
            pose=pose.inverse(),
            inliers=len(inliers),
            eta=chosen.eta,
            H=best.H,
            island=best.interval,
            counts=dict(counts),
        )

    def run(self, observations: Iterable[StereoObservation]) -> list[LoopDetection | Rejection]:
        return [self.process(o) for o in observations]


def write_detections(path: str | Path, results: Iterable, rejections_path: str | Path | None = None) -> list[LoopDetection]:
    """Write detections (and optionally rejections) as CSV; returns the detections."""
    results = list(results)
    dets = [r for r in results if isinstance(r, LoopDetection)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        w.writerows(d.row() for d in dets)
    if rejections_path is not None:
        with open(rejections_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REJECTION_COLUMNS)
            w.writerows(r.row() for r in results if isinstance(r, Rejection))
    return dets


@dataclass(frozen=True)
class DetectionRecord:
    """One row of a detections CSV."""

    query_id: int
    query_ts: float
    match_id: int
    match_ts: float
    pose: Pose
    inliers: int
    eta: float
    H: float


def read_detections(path: str | Path) -> list[DetectionRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pose = Pose(
                [float(row[k]) for k in ("qx", "qy", "qz", "qw")],
                [float(row[k]) for k in ("tx", "ty", "tz")],
            )
            out.append(
                DetectionRecord(
                    int(row["query_id"]), float(row["query_ts"]), int(row["match_id"]), float(row["match_ts"]),
                    pose, int(row["inliers"]), float(row["eta"]), float(row["H"]),
                )
            )
    return out
