"""Experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import PipelineConfig
from .evaluation import ScoredPair, pairwise_scores
from .pipeline import LoopDetection, LoopDetector, Rejection
from .synthetic import SyntheticSequence
from .vocabulary import VocabularyTree, score


@dataclass
class RunResult:
    results: list[LoopDetection | Rejection]
    frame_seconds: list[float] = field(default_factory=list)

    @property
    def detections(self) -> list[LoopDetection]:
        return [r for r in self.results if isinstance(r, LoopDetection)]

    @property
    def mean_frame_seconds(self) -> float:
        return float(np.mean(self.frame_seconds)) if self.frame_seconds else 0.0


def run_frames(detector: LoopDetector, build: Iterable) -> RunResult:
    """Process observations produced lazily by ``build``; times build plus process per frame."""
    out = RunResult([])
    it = iter(build)
    while True:
        t0 = time.perf_counter()
        try:
            obs = next(it)
        except StopIteration:
            break
        out.results.append(detector.process(obs))
        out.frame_seconds.append(time.perf_counter() - t0)
    return out


def synthetic_observations(detector: LoopDetector, seq: SyntheticSequence):
    for f in seq.frames:
        yield detector.observe(f.left_uv, f.right_uv, f.left_desc, f.right_desc, f.timestamp, f.index, f.response)


def run_synthetic(seq: SyntheticSequence, vocabulary: VocabularyTree, cfg: PipelineConfig | None = None) -> RunResult:
    det = LoopDetector(vocabulary, seq.calibration, cfg)
    return run_frames(det, synthetic_observations(det, seq))


def revisit_frames(positions: np.ndarray, timestamps: np.ndarray, radius: float, exclusion: float) -> list[int]:
    """Frames within ``radius`` metres of a frame at least ``exclusion`` seconds older."""
    pos = np.asarray(positions, dtype=float)
    ts = np.asarray(timestamps, dtype=float)
    out = []
    for j in range(len(ts)):
        older = ts <= ts[j] - exclusion
        if np.any(older) and np.min(np.linalg.norm(pos[older] - pos[j], axis=1)) <= radius:
            out.append(j)
    return out


@dataclass(frozen=True)
class AblationRow:
    n_feat: int
    floor: int
    detections: int
    mean_frame_ms: float


def ablation(
    seq: SyntheticSequence,
    vocabulary: VocabularyTree,
    n_feats: Sequence[int] = (2000, 4000, 8000),
    base: PipelineConfig | None = None,
) -> list[AblationRow]:
    """Detection count and per-frame compute time per feature budget, floor = 1%."""
    base = base or PipelineConfig()
    rows = []
    for n in n_feats:
        cfg = base.with_updates(n_feat=n, ablation_floor=True)
        run = run_synthetic(seq, vocabulary, cfg)
        rows.append(AblationRow(n, cfg.floor, len(run.detections), 1000.0 * run.mean_frame_seconds))
    return rows


def keyframe_scores(
    bows: Sequence, timestamps: Sequence[float], positions: np.ndarray, exclusion: float
) -> list[ScoredPair]:
    return pairwise_scores(bows, timestamps, positions, exclusion, score)

