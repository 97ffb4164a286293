"""On-disk dataset layout.

A dataset root holds ``calib.toml``, ``times.txt`` (``frame_id timestamp``
per line), an optional ``groundtruth.txt``, and the frames themselves:
either ``left/`` and ``right/`` image folders (sorted file names pair up
with the lines of ``times.txt``) or ``features/NNNNNN.npz`` files with
stereo-matched features as written by the synthetic generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import CameraCalibration
from .errors import DatasetError, OutOfSpan
from .evaluation import GroundTruth, select_keyframes
from .features import detect_and_describe, load_image

IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class FrameRef:
    index: int
    timestamp: float
    left: Path
    right: Path | None = None


class Dataset:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"{self.root}: not a directory")
        calib = self.root / "calib.toml"
        if not calib.exists():
            raise DatasetError(f"{self.root}: missing calib.toml")
        self.calibration = CameraCalibration.load(calib)
        self.times = self._read_times(self.root / "times.txt")
        gt_path = self.root / "groundtruth.txt"
        self.groundtruth = GroundTruth.load(gt_path) if gt_path.exists() else None

        if (self.root / "features").is_dir():
            self.kind = "features"
            files = sorted((self.root / "features").glob("*.npz"))
            if len(files) != len(self.times):
                raise DatasetError(f"{len(files)} feature files but {len(self.times)} timestamps")
            self.frames = [FrameRef(i, t, f) for (i, t), f in zip(self.times, files)]
        elif (self.root / "left").is_dir() and (self.root / "right").is_dir():
            self.kind = "images"
            left = _images(self.root / "left")
            right = _images(self.root / "right")
            if len(left) != len(right):
                raise DatasetError(f"{len(left)} left images but {len(right)} right images")
            if len(left) != len(self.times):
                raise DatasetError(f"{len(left)} image pairs but {len(self.times)} timestamps")
            self.frames = [FrameRef(i, t, l, r) for (i, t), l, r in zip(self.times, left, right)]
        else:
            raise DatasetError(f"{self.root}: expected features/ or left/ and right/")

        if self.groundtruth is not None and self.frames:
            lo, hi = self.groundtruth.span
            outside = [f.index for f in self.frames if not lo <= f.timestamp <= hi]
            if outside:
                raise DatasetError(f"{len(outside)} frames fall outside the ground-truth span, first {outside[0]}")

    @staticmethod
    def _read_times(path: Path) -> list[tuple[int, float]]:
        if not path.exists():
            raise DatasetError(f"missing {path}")
        out = []
        for n, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                out.append((int(parts[0]), float(parts[1])) if len(parts) >= 2 else (len(out), float(parts[0])))
            except ValueError as exc:
                raise DatasetError(f"{path}:{n}: {exc}") from exc
        return out

    def __len__(self) -> int:
        return len(self.frames)

    def keyframes(self, min_translation: float = 0.5, min_rotation_deg: float = 10.0) -> list[FrameRef]:
        """Frames selected from the ground-truth poses at the frame timestamps."""
        if self.groundtruth is None:
            raise DatasetError("keyframe selection needs groundtruth.txt")
        poses = [self.groundtruth.pose_at(f.timestamp) for f in self.frames]
        return [self.frames[k] for k in select_keyframes(poses, min_translation, min_rotation_deg)]

    def observations(self, detector, frames: list[FrameRef] | None = None) -> Iterator:
        """Yield a :class:`StereoObservation` per frame, built by ``detector``."""
        for f in self.frames if frames is None else frames:
            if self.kind == "features":
                z = load_features(f.left)
                yield detector.observe(
                    z["left_uv"], z["right_uv"], z["left_desc"], z["right_desc"], f.timestamp, f.index, z.get("response")
                )
            else:
                yield detector.ingest(load_image(f.left), load_image(f.right), f.timestamp, f.index)

    def positions(self, frames: list[FrameRef]) -> np.ndarray:
        if self.groundtruth is None:
            raise DatasetError("positions need groundtruth.txt")
        try:
            return np.array([self.groundtruth.pose_at(f.timestamp).translation for f in frames])
        except OutOfSpan as exc:
            raise DatasetError(str(exc)) from exc


def _images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_features(path: str | Path) -> dict:
    try:
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def collect_descriptors(source: str | Path, n_feat: int = 2000, limit: int | None = None) -> np.ndarray:
    """Training descriptors from a ``.npy`` array, a feature dataset or an image dataset."""
    source = Path(source)
    if source.suffix == ".npy":
        desc = np.load(source)
    else:
        ds = Dataset(source)
        chunks = []
        for f in ds.frames:
            if ds.kind == "features":
                chunks.append(load_features(f.left)["left_desc"])
            else:
                _, d = detect_and_describe(load_image(f.left), n_feat)
                chunks.append(d)
        desc = np.concatenate(chunks) if chunks else np.zeros((0, 32), np.uint8)
    desc = np.ascontiguousarray(desc, dtype=np.uint8)
    if desc.ndim != 2 or desc.shape[1] != 32:
        raise DatasetError(f"{source}: expected (N, 32) uint8 descriptors, got shape {desc.shape}")
    if limit is not None and len(desc) > limit:
        desc = desc[np.linspace(0, len(desc) - 1, limit).astype(int)]
    return desc
