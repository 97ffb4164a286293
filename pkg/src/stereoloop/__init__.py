"""Stereo loop detection with a hierarchical bag of binary words, normalised
similarity scores, temporal islands and a metric relative pose from robust
PnP on triangulated stereo points."""

from .core import CameraCalibration, FrameId, PipelineConfig, Pose, compose
from .database import LoopDatabase
from .errors import StereoLoopError
from .evaluation import GroundTruth, evaluate, gt_relative_pose, select_keyframes, threshold_sweep
from .pipeline import LoopDetection, LoopDetector, Rejection, RejectionReason, StereoObservation
from .pnp import pnp_ransac
from .synthetic import generate_synthetic
from .vocabulary import BowVector, VocabularyTree, score, train

__all__ = [
    "BowVector",
    "CameraCalibration",
    "FrameId",
    "GroundTruth",
    "LoopDatabase",
    "LoopDetection",
    "LoopDetector",
    "PipelineConfig",
    "Pose",
    "Rejection",
    "RejectionReason",
    "StereoLoopError",
    "StereoObservation",
    "VocabularyTree",
    "compose",
    "evaluate",
    "generate_synthetic",
    "gt_relative_pose",
    "pnp_ransac",
    "score",
    "select_keyframes",
    "threshold_sweep",
    "train",
]
