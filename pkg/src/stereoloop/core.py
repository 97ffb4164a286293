"""Shared domain types: SE(3) poses, the pinhole stereo camera, frame ids and
pipeline configuration.

Quaternions are stored as ``(qx, qy, qz, qw)`` (Hamilton, scalar last), the
same order used by the ground-truth and detection files.  A :class:`Pose`
maps points from its source frame into its target frame,
``x_target = R @ x_source + t``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, NonPositiveDepth

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


# ---------------------------------------------------------------------------
# rotation helpers


def skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: axis-angle vector -> rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor keeps the result orthonormal to ~1e-16
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with qw >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[3] >= 0 else -q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b, dot = -b, -dot
    if dot > 0.9995:
        q = a + u * (b - a)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    q = (math.sin((1.0 - u) * theta) * a + math.sin(u * theta) * b) / s
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not n > 0:
            raise ValueError("zero quaternion")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R: np.ndarray, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=float))

    @classmethod
    def from_axis_angle(cls, w, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_matrix(so3_exp(np.asarray(w, dtype=float)), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def inverse(self) -> "Pose":
        q = self.rotation * np.array([-1.0, -1.0, -1.0, 1.0])
        return Pose(q, -(quat_to_matrix(q) @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return Pose(q, t)

    __matmul__ = compose

    def rotation_angle(self) -> float:
        """Angle of the rotation part, in [0, pi]."""
        w = min(abs(float(self.rotation[3])), 1.0)
        v = float(np.linalg.norm(self.rotation[:3]))
        return 2.0 * math.atan2(v, w)

    def distance_to(self, other: "Pose") -> tuple[float, float]:
        """(rotation angle, translation distance) between two poses."""
        delta = self.inverse().compose(other)
        return delta.rotation_angle(), float(np.linalg.norm(self.translation - other.translation))

    def __repr__(self) -> str:
        t = ", ".join(f"{x:.6g}" for x in self.translation)
        q = ", ".join(f"{x:.6g}" for x in self.rotation)
        return f"Pose(t=[{t}], q=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraCalibration:
    """Rectified pinhole stereo rig; the left camera is the reference frame."""

    f: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise ConfigError("focal length must be positive")
        if not self.baseline > 0:
            raise ConfigError("stereo baseline must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigError("principal point outside the image")

    @classmethod
    def load(cls, path: str | Path) -> "CameraCalibration":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("camera", data)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown calibration keys: {sorted(unknown)}")
        missing = names - set(data)
        if missing:
            raise ConfigError(f"missing calibration keys: {sorted(missing)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(_to_toml({"camera": asdict(self)}))

    def in_image(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= margin)
            & (uv[:, 0] <= self.width - 1 - margin)
            & (uv[:, 1] >= margin)
            & (uv[:, 1] <= self.height - 1 - margin)
        )


def project(cal: CameraCalibration, point) -> tuple[float, float]:
    X, Y, Z = (float(c) for c in point)
    if Z <= 0:
        raise NonPositiveDepth(f"point depth {Z} is not in front of the camera")
    return cal.f * X / Z + cal.cx, cal.f * Y / Z + cal.cy


def project_points(cal: CameraCalibration, points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project` for an (N, 3) array; raises on any Z <= 0."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if np.any(P[:, 2] <= 0):
        raise NonPositiveDepth("points behind the camera")
    return np.column_stack([cal.f * P[:, 0] / P[:, 2] + cal.cx, cal.f * P[:, 1] / P[:, 2] + cal.cy])


def backproject(cal: CameraCalibration, pixel, depth: float) -> np.ndarray:
    if depth <= 0:
        raise NonPositiveDepth(f"depth {depth} must be positive")
    u, v = pixel
    return np.array([(u - cal.cx) * depth / cal.f, (v - cal.cy) * depth / cal.f, depth])


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True, order=True)
class FrameId:
    index: int
    timestamp: float


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FeatureConfig:
    fast_threshold: int = 20
    n_octaves: int = 1
    scale_factor: float = 1.2
    grid_cells: int = 8


@dataclass(frozen=True)
class MatchingConfig:
    row_tolerance: float = 2.0
    max_hamming: int = 50


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    threshold_px: float = 2.0
    confidence: float = 0.99
    seed: int = 0
    refine_max_iterations: int = 50
    refine_step_tol: float = 1e-10


@dataclass(frozen=True)
class PipelineConfig:
    n_feat: int = 2000
    norm_score_threshold: float = 0.3
    consistency_length: int = 5
    temporal_exclusion: float = 20.0
    depth_min: float = 0.4
    depth_max: float = 50.0
    min_features_floor: int = 20
    ablation_floor: bool = False
    island_max_gap: float = 3.0
    normalizer_epsilon: float = 0.005
    features: FeatureConfig = field(default_factory=FeatureConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if not self.depth_min < self.depth_max:
            raise ConfigError("depth_min must be below depth_max")
        if not 0 < self.norm_score_threshold <= 1:
            raise ConfigError("norm_score_threshold must lie in (0, 1]")
        if self.consistency_length < 0:
            raise ConfigError("consistency_length must be >= 0")
        if self.n_feat < 0:
            raise ConfigError("n_feat must be >= 0")
        if self.floor < 4:
            raise ConfigError("the feature floor must be at least 4 (minimal PnP sample)")

    @property
    def floor(self) -> int:
        """Feature count every verification stage must keep."""
        if self.ablation_floor:
            return math.ceil(0.01 * self.n_feat)
        return self.min_features_floor

    def with_updates(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    # -- file IO --------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        sub = {"features": FeatureConfig, "matching": MatchingConfig, "ransac": RansacConfig}
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
            if key in sub:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key!r} must be a table")
                allowed = {f.name for f in fields(sub[key])}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown configuration keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sub[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(_to_toml(self.to_dict()))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _to_toml(data: dict[str, Any]) -> str:
    scalars = [f"{k} = {_toml_value(v)}" for k, v in data.items() if not isinstance(v, dict)]
    lines = scalars[:]
    for k, v in data.items():
        if isinstance(v, dict):
            if lines:
                lines.append("")
            lines.append(f"[{k}]")
            lines.extend(f"{kk} = {_toml_value(vv)}" for kk, vv in v.items())
    return "\n".join(lines) + "\n"
