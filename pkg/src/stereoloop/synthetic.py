"""Feature-level synthetic stereo sequences with scripted revisits.

Landmarks carry a 256-bit descriptor drawn from a hierarchical appearance
model: a tree of prototypes where each level flips a fraction of its
parent's bits.  Real binary descriptors cluster in a similar nested way,
which is what lets a vocabulary tree quantise them stably.  Each keyframe
projects the visible landmarks into both cameras, adds pixel noise and
independent bit flips per view, and keeps the rows that still have
positive disparity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import CameraCalibration, Pose
from .errors import InfeasibleTrajectory
from .evaluation import GroundTruth, camera_rotation, select_keyframes

SCENARIOS = ("out_and_back", "loop", "figure_eight")


@dataclass(frozen=True)
class AppearanceConfig:
    branching: int = 10
    depth: int = 5
    # bit-flip rate applied at each level of the prototype tree; 0.5 = independent
    level_rates: tuple[float, ...] = (0.5, 0.2, 0.12, 0.08, 0.05)
    landmark_rate: float = 0.02
    seed: int = 1234

    def __post_init__(self):
        if len(self.level_rates) != self.depth:
            raise ValueError("level_rates needs one entry per level")


@dataclass(frozen=True)
class WorldConfig:
    n_landmarks: int = 400_000
    margin: float = 35.0
    height_range: tuple[float, float] = (0.0, 3.0)
    aliased_fraction: float = 0.05
    n_aliased: int = 20
    min_depth: float = 0.4
    max_depth: float = 50.0
    # a landmark is only detected from viewpoints close to its reference view
    view_cone_deg: float = 40.0
    scale_window: float = 1.1
    ref_depth_range: tuple[float, float] = (1.5, 30.0)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)


@dataclass(frozen=True)
class TrajectoryConfig:
    scenario: str = "out_and_back"
    laps: int = 2
    straight: float = 30.0
    radius: float = 8.0
    lateral_offset: float = 0.2
    speed: float = 1.0
    step: float = 0.1
    camera_height: float = 1.5
    keyframe_translation: float = 0.5
    keyframe_rotation_deg: float = 10.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")


@dataclass(frozen=True)
class NoiseConfig:
    sigma_px: float = 1.0
    p_bit: float = 0.05


@dataclass(frozen=True, eq=False)
class SyntheticFrame:
    """Stereo-matched features of one keyframe; row i is landmark ``landmark_ids[i]``."""

    index: int
    timestamp: float
    left_uv: np.ndarray
    right_uv: np.ndarray
    left_desc: np.ndarray
    right_desc: np.ndarray
    response: np.ndarray
    landmark_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.landmark_ids)


@dataclass(eq=False)
class SyntheticSequence:
    calibration: CameraCalibration
    frames: list[SyntheticFrame]
    groundtruth: GroundTruth
    landmarks: LandmarkField
    keyframe_poses: list[Pose]
    config: dict = field(default_factory=dict)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.keyframe_poses])

    def save(self, root: str | Path) -> None:
        """Write the feature-level dataset layout (``features/`` instead of images)."""
        root = Path(root)
        (root / "features").mkdir(parents=True, exist_ok=True)
        self.calibration.save(root / "calib.toml")
        self.groundtruth.save(root / "groundtruth.txt")
        with open(root / "times.txt", "w") as fh:
            for f in self.frames:
                fh.write(f"{f.index} {f.timestamp:.10g}\n")
        for f in self.frames:
            np.savez(
                root / "features" / f"{f.index:06d}.npz",
                left_uv=f.left_uv, right_uv=f.right_uv, left_desc=f.left_desc,
                right_desc=f.right_desc, response=f.response, landmark_ids=f.landmark_ids,
            )
        (root / "synth.json").write_text(json.dumps(self.config, indent=2, default=list) + "\n")


# ---------------------------------------------------------------------------
# appearance


def flip_bits(desc: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Independent bit flips with probability ``p`` on packed (N, 32) descriptors."""
    desc = np.asarray(desc, dtype=np.uint8)
    if p <= 0:
        return desc.copy()
    mask = rng.random((desc.shape[0], desc.shape[1] * 8), dtype=np.float32) < p
    return desc ^ np.packbits(mask, axis=1)


def prototype_tree(cfg: AppearanceConfig) -> np.ndarray:
    """Leaf prototypes of the appearance model, shape (branching**depth, 32)."""
    rng = np.random.default_rng(cfg.seed)
    level = np.zeros((1, 32), dtype=np.uint8)
    for rate in cfg.level_rates:
        level = flip_bits(np.repeat(level, cfg.branching, axis=0), rate, rng)
    return level


def sample_descriptors(cfg: AppearanceConfig, n: int, rng: np.random.Generator, p_bit: float = 0.0) -> np.ndarray:
    """Draw ``n`` landmark-like descriptors, optionally with observation noise on top.

    Useful for training a vocabulary on data from the same appearance model
    without touching the landmarks of a particular world.
    """
    leaves = prototype_tree(cfg)
    d = flip_bits(leaves[rng.integers(len(leaves), size=n)], cfg.landmark_rate, rng)
    return flip_bits(d, p_bit, rng)


# ---------------------------------------------------------------------------
# trajectories


def _stadium(straight: float, radius: float) -> np.ndarray:
    """One closed lap: east along y=0, left turn, west along y=2r, left turn."""
    s = np.linspace(0.0, straight, 300, endpoint=False)
    a = np.linspace(-math.pi / 2, math.pi / 2, 300, endpoint=False)
    return np.vstack([
        np.column_stack([s, np.zeros_like(s)]),
        np.column_stack([straight + radius * np.cos(a), radius + radius * np.sin(a)]),
        np.column_stack([straight - s, np.full_like(s, 2 * radius)]),
        np.column_stack([-radius * np.cos(a), radius - radius * np.sin(a)]),
    ])


def lap_points(cfg: TrajectoryConfig) -> np.ndarray:
    """Dense closed 2D polyline of one lap of the scenario (last point omitted)."""
    if cfg.scenario == "out_and_back":
        return _stadium(cfg.straight, cfg.radius)
    a = np.linspace(0.0, 2 * math.pi, 2400, endpoint=False)
    if cfg.scenario == "loop":
        return np.column_stack([cfg.radius * np.sin(a), cfg.radius * (1 - np.cos(a))])
    # lemniscate of Gerono, crossing itself at the origin
    scale = cfg.straight / 2
    return np.column_stack([scale * np.sin(a), scale * np.sin(a) * np.cos(a)])


def resample(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    samples = np.arange(0.0, s[-1] + 1e-9, step)
    return np.column_stack([np.interp(samples, s, points[:, k]) for k in range(points.shape[1])])


def path_points(cfg: TrajectoryConfig) -> np.ndarray:
    """``laps`` repetitions of the lap, resampled every ``step`` metres.

    Each revisit is shifted sideways by a smooth profile
    ``A (1 - cos(pi s / L)) / 2`` of arc length ``s`` (lap length ``L``), so
    consecutive laps are separated by between 0 and ``lateral_offset``
    metres with no jumps in heading.
    """
    lap = lap_points(cfg)
    closed = np.vstack([lap, lap[:1]])
    lap_len = float(np.linalg.norm(np.diff(closed, axis=0), axis=1).sum())
    xy = resample(np.vstack([lap] * cfg.laps + [lap[:1]]), cfg.step)
    if cfg.lateral_offset == 0:
        return xy
    s = np.arange(len(xy)) * cfg.step
    d = np.gradient(xy, axis=0)
    left = np.column_stack([-d[:, 1], d[:, 0]]) / np.linalg.norm(d, axis=1, keepdims=True)
    off = cfg.lateral_offset * (1 - np.cos(math.pi * s / lap_len)) / 2
    return xy + off[:, None] * left


def trajectory(cfg: TrajectoryConfig) -> tuple[np.ndarray, list[Pose]]:
    """Timestamps and camera-to-world poses sampled about every ``step`` metres."""
    xy = path_points(cfg)
    d = np.gradient(xy, axis=0)
    yaw = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    t = np.arange(len(xy)) * cfg.step / cfg.speed
    poses = [Pose.from_matrix(camera_rotation(h), [x, y, cfg.camera_height]) for (x, y), h in zip(xy, yaw)]
    return t, poses


# ---------------------------------------------------------------------------
# generator


def default_calibration() -> CameraCalibration:
    return CameraCalibration(f=600.0, cx=512.0, cy=272.0, baseline=0.21, width=1024, height=544)


@dataclass(eq=False)
class LandmarkField:
    """Landmarks with appearance and detectability attributes.

    A landmark is detected only from viewpoints within ``cone_deg`` of its
    horizontal normal and at depths within a factor ``scale_window`` of its
    reference depth, which mimics the limited viewpoint and scale
    invariance of single-octave binary features.
    """

    positions: np.ndarray
    descriptors: np.ndarray
    strength: np.ndarray
    normals: np.ndarray
    ref_depth: np.ndarray
    cone_deg: float = 180.0
    scale_window: float = math.inf
    cell: float = 10.0

    def __post_init__(self):
        xy = self.positions[:, :2]
        self._origin = xy.min(axis=0) if len(xy) else np.zeros(2)
        ij = np.floor((xy - self._origin) / self.cell).astype(np.int64)
        self._shape = ij.max(axis=0) + 1 if len(xy) else np.ones(2, dtype=np.int64)
        key = ij[:, 0] * self._shape[1] + ij[:, 1]
        self._order = np.argsort(key, kind="stable")
        n_cells = int(self._shape[0] * self._shape[1])
        self._starts = np.searchsorted(key[self._order], np.arange(n_cells + 1))

    def __len__(self) -> int:
        return len(self.positions)

    def nearby(self, center: np.ndarray, forward: np.ndarray, radius: float) -> np.ndarray:
        """Indices in grid cells that may hold points within ``radius`` ahead of ``center``."""
        gi, gj = np.meshgrid(np.arange(self._shape[0]), np.arange(self._shape[1]), indexing="ij")
        mid = self._origin + (np.column_stack([gi.ravel(), gj.ravel()]) + 0.5) * self.cell
        rel = mid - center
        slack = self.cell * math.sqrt(0.5)
        ok = (np.linalg.norm(rel, axis=1) <= radius + slack) & (rel @ forward >= -slack)
        cells = np.flatnonzero(ok)
        parts = [self._order[self._starts[c] : self._starts[c + 1]] for c in cells]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def observe(self, cal: CameraCalibration, pose: Pose, min_depth: float, max_depth: float):
        """``(ids, left_uv, right_uv, depth)`` of landmarks detectable from ``pose``, exact pixels."""
        fwd = pose.R[:2, 2]
        fwd = fwd / max(np.linalg.norm(fwd), 1e-12)
        idx = self.nearby(pose.translation[:2], fwd, max_depth)
        # viewing-cone test first; it only needs horizontal coordinates
        to_cam = pose.translation[:2] - self.positions[idx, :2]
        dist = np.hypot(to_cam[:, 0], to_cam[:, 1])
        n = self.normals[idx]
        cosang = (to_cam[:, 0] * n[:, 0] + to_cam[:, 1] * n[:, 1]) / np.maximum(dist, 1e-12)
        # depth never exceeds the Euclidean distance
        dz = pose.translation[2] - self.positions[idx, 2]
        far_enough = np.sqrt(dist**2 + dz**2) * self.scale_window >= self.ref_depth[idx]
        ok = (cosang >= math.cos(math.radians(self.cone_deg))) & far_enough
        idx = idx[ok]
        Xc = pose.inverse().apply(self.positions[idx])
        z = Xc[:, 2]
        ref = self.ref_depth[idx]
        ok = (z >= min_depth) & (z <= max_depth) & (z >= ref / self.scale_window) & (z <= ref * self.scale_window)
        idx, Xc = idx[ok], Xc[ok]
        z = Xc[:, 2]
        u = cal.f * Xc[:, 0] / z + cal.cx
        v = cal.f * Xc[:, 1] / z + cal.cy
        left = np.column_stack([u, v])
        right = np.column_stack([u - cal.f * cal.baseline / z, v])
        inside = cal.in_image(left) & cal.in_image(right)
        return idx[inside], left[inside], right[inside], z[inside]


def make_field(world: WorldConfig, lo: np.ndarray, hi: np.ndarray, rng: np.random.Generator) -> LandmarkField:
    n = world.n_landmarks
    X = np.column_stack([
        rng.uniform(lo[0], hi[0], n),
        rng.uniform(lo[1], hi[1], n),
        rng.uniform(world.height_range[0], world.height_range[1], n),
    ])
    desc = sample_descriptors(world.appearance, n, rng)
    n_alias = int(round(world.aliased_fraction * n))
    if n_alias and world.n_aliased:
        # repeated texture: several landmarks share one descriptor exactly
        who = rng.choice(n, n_alias, replace=False)
        desc[who] = desc[rng.choice(n, world.n_aliased, replace=False)][rng.integers(world.n_aliased, size=n_alias)]
    strength = rng.uniform(0.5, 1.0, n)
    azimuth = rng.uniform(0.0, 2 * math.pi, n)
    lo_r, hi_r = world.ref_depth_range
    ref = np.exp(rng.uniform(math.log(lo_r), math.log(hi_r), n))
    normals = np.column_stack([np.cos(azimuth), np.sin(azimuth)])
    return LandmarkField(X, desc, strength, normals, ref, world.view_cone_deg, world.scale_window)


def generate_synthetic(
    world: WorldConfig | None = None,
    traj: TrajectoryConfig | None = None,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    calibration: CameraCalibration | None = None,
) -> SyntheticSequence:
    """Landmark field, trajectory with revisits, and noisy keyframe observations.

    Keyframes are picked from the dense ground truth with
    :func:`select_keyframes`.  Raises :class:`InfeasibleTrajectory` when at
    least 10% of keyframes see no landmark.
    """
    world = world or WorldConfig()
    traj = traj or TrajectoryConfig()
    noise = noise or NoiseConfig()
    cal = calibration or default_calibration()
    rng = np.random.default_rng(seed)

    times, poses = trajectory(traj)
    xy = np.array([p.translation[:2] for p in poses])
    lm = make_field(world, xy.min(axis=0) - world.margin, xy.max(axis=0) + world.margin, rng)

    keys = select_keyframes(poses, traj.keyframe_translation, traj.keyframe_rotation_deg)
    frames, empty = [], 0
    for fi, k in enumerate(keys):
        ids, left, right, z = lm.observe(cal, poses[k], world.min_depth, world.max_depth)
        if noise.sigma_px > 0:
            left = left + rng.normal(0.0, noise.sigma_px, left.shape)
            right = right + rng.normal(0.0, noise.sigma_px, right.shape)
        ld = flip_bits(lm.descriptors[ids], noise.p_bit, rng)
        rd = flip_bits(lm.descriptors[ids], noise.p_bit, rng)
        keep = left[:, 0] - right[:, 0] > 0
        if not np.any(keep):
            empty += 1
        # nearer landmarks look bigger and respond more strongly
        resp = lm.strength[ids] / np.maximum(z, 1.0)
        frames.append(SyntheticFrame(fi, float(times[k]), left[keep], right[keep], ld[keep], rd[keep], resp[keep], ids[keep]))
    if len(keys) and empty >= 0.1 * len(keys):
        raise InfeasibleTrajectory(f"{empty} of {len(keys)} keyframes see no landmarks")

    meta = {"seed": seed, "world": asdict(world), "trajectory": asdict(traj), "noise": asdict(noise)}
    return SyntheticSequence(cal, frames, GroundTruth(times, poses), lm, [poses[k] for k in keys], meta)


def scenario(name: str, seed: int = 0, **overrides) -> SyntheticSequence:
    """Generate a named scenario with default world and noise settings.

    ``overrides`` may hold ``world``, ``noise`` or trajectory fields.
    """
    world = overrides.pop("world", None)
    noise = overrides.pop("noise", None)
    traj = replace(TrajectoryConfig(), scenario=name, **overrides)
    return generate_synthetic(world, traj, noise, seed)
