"""Oriented FAST corners and rotated binary (ORB-style) descriptors.

Descriptors are 256-bit strings stored as ``(N, 32)`` uint8 arrays; the
Hamming helpers reinterpret them as four uint64 words for popcounts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureConfig
from .errors import ImageTooSmall, PatchOutOfBounds

DESCRIPTOR_BYTES = 32
DESCRIPTOR_BITS = 256
PATCH_SIZE = 31
HALF_PATCH = PATCH_SIZE // 2
MIN_IMAGE_SIZE = 64

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dx, dy)
_CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
)
_ARC = 9


def _make_test_pattern(seed: int = 0x0B5) -> np.ndarray:
    """256 point pairs drawn isotropic-Gaussian inside the radius-15 disc.

    The disc (rather than the square patch) keeps every rotated test inside
    the patch margin.  The pattern is a module constant: changing the seed
    changes every descriptor and invalidates stored vocabularies.
    """
    rng = np.random.default_rng(seed)
    sigma = PATCH_SIZE / 5.0
    pts = []
    while len(pts) < 2 * DESCRIPTOR_BITS:
        p = np.rint(rng.normal(0.0, sigma, size=2))
        if p[0] ** 2 + p[1] ** 2 <= HALF_PATCH**2:
            pts.append(p)
    return np.array(pts, dtype=float).reshape(DESCRIPTOR_BITS, 2, 2)


TEST_PATTERN = _make_test_pattern()

# circular mask for the intensity-centroid moments
_yy, _xx = np.mgrid[-HALF_PATCH : HALF_PATCH + 1, -HALF_PATCH : HALF_PATCH + 1]
_DISC = (_xx**2 + _yy**2) <= HALF_PATCH**2
_MX = np.where(_DISC, _xx, 0).astype(float)
_MY = np.where(_DISC, _yy, 0).astype(float)


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    response: float
    angle: float
    octave: int = 0

    @property
    def pt(self) -> tuple[float, float]:
        return (self.u, self.v)


# ---------------------------------------------------------------------------
# image helpers


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale PGM or PNG."""
    from PIL import Image

    path = Path(path)
    if path.suffix.lower() not in {".pgm", ".png"}:
        raise ValueError(f"unsupported image format: {path.suffix}")
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def _gaussian_blur(img: np.ndarray, sigma: float = 2.0, radius: int = 3) -> np.ndarray:
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img.astype(float), radius, mode="reflect")
    tmp = sum(k[i] * pad[:, i : i + img.shape[1]] for i in range(len(k)))
    return sum(k[i] * tmp[i : i + img.shape[0], :] for i in range(len(k)))


def _resize(img: np.ndarray, scale: float) -> np.ndarray:
    from PIL import Image

    h, w = img.shape
    size = (max(1, int(round(w / scale))), max(1, int(round(h / scale))))
    return np.asarray(Image.fromarray(img).resize(size, Image.BILINEAR), dtype=np.uint8)


def _pyramid(image: np.ndarray, cfg: FeatureConfig) -> list[tuple[np.ndarray, float]]:
    levels = [(image, 1.0)]
    for o in range(1, cfg.n_octaves):
        scale = cfg.scale_factor**o
        lvl = _resize(image, scale)
        if min(lvl.shape) < MIN_IMAGE_SIZE:
            break
        levels.append((lvl, scale))
    return levels


# ---------------------------------------------------------------------------
# detection


def fast_score(image: np.ndarray) -> np.ndarray:
    """Segment-test corner strength for every pixel.

    The integer part is the largest ``t`` such that nine contiguous circle
    pixels are all brighter than centre+t or all darker than centre-t, so a
    pixel is a corner at threshold ``thr`` iff ``score > thr``.  The
    fractional part is the mean absolute circle difference / 256, which
    breaks ties on saturated plateaus in favour of the sharpest corner.
    Pixels closer than 3 px to the border score 0.
    """
    img = image.astype(np.int16)
    h, w = img.shape
    score = np.zeros((h, w), dtype=float)
    if h < 7 or w < 7:
        return score
    c = img[3 : h - 3, 3 : w - 3]
    diff = np.stack([img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] - c for dx, dy in _CIRCLE])
    best = np.zeros_like(c)
    for d in (diff, -diff):
        m2 = np.minimum(d, np.roll(d, -1, axis=0))
        m4 = np.minimum(m2, np.roll(m2, -2, axis=0))
        m8 = np.minimum(m4, np.roll(m4, -4, axis=0))
        m9 = np.minimum(m8, np.roll(d, -8, axis=0))
        best = np.maximum(best, m9.max(axis=0))
    sad = np.abs(diff).mean(axis=0) / 256.0
    score[3 : h - 3, 3 : w - 3] = best + sad
    return score


def _nonmax(score: np.ndarray, threshold: int) -> np.ndarray:
    """3x3 non-maximum suppression; plateaus keep their last pixel in raster order."""
    h, w = score.shape
    pad = np.pad(score, 1, mode="constant", constant_values=-1)
    keep = np.floor(score) > threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nb = pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            if (dy, dx) > (0, 0):
                keep &= score >= nb
            else:
                keep &= score > nb
    return keep


def _orientation(image: np.ndarray, u: int, v: int) -> float:
    patch = image[v - HALF_PATCH : v + HALF_PATCH + 1, u - HALF_PATCH : u + HALF_PATCH + 1].astype(float)
    m10 = float((patch * _MX).sum())
    m01 = float((patch * _MY).sum())
    return math.atan2(m01, m10)


def _bucket(cells: np.ndarray, n_feat: int, n_cells: int) -> np.ndarray:
    """Ranks kept by per-cell quotas followed by a global refill.

    ``cells[i]`` is the grid cell of the i-th strongest candidate.
    """
    quota = math.ceil(n_feat / n_cells)
    taken = np.zeros(len(cells), dtype=bool)
    per_cell = np.zeros(n_cells, dtype=int)
    for i in range(len(cells)):
        c = cells[i]
        if per_cell[c] < quota:
            per_cell[c] += 1
            taken[i] = True
    kept = np.flatnonzero(taken)
    if len(kept) > n_feat:
        kept = kept[:n_feat]
    elif len(kept) < n_feat:
        rest = np.flatnonzero(~taken)[: n_feat - len(kept)]
        kept = np.sort(np.concatenate([kept, rest]))
    return kept


def detect(image: np.ndarray, n_feat: int, cfg: FeatureConfig | None = None) -> list[Keypoint]:
    """Detect up to ``n_feat`` oriented corners, strongest first.

    Candidates closer than the descriptor half-patch (plus one pixel) to the
    border are discarded, so every returned keypoint can be described.
    """
    cfg = cfg or FeatureConfig()
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < MIN_IMAGE_SIZE or image.shape[1] < MIN_IMAGE_SIZE:
        raise ImageTooSmall(f"image must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {image.shape}")
    if n_feat <= 0:
        return []
    image = image.astype(np.uint8)
    h0, w0 = image.shape
    margin = HALF_PATCH + 1

    us, vs, rs, angs, octs = [], [], [], [], []
    for octave, (lvl, scale) in enumerate(_pyramid(image, cfg)):
        score = fast_score(lvl)
        keep = _nonmax(score, cfg.fast_threshold)
        lh, lw = lvl.shape
        keep[:margin, :] = False
        keep[lh - margin :, :] = False
        keep[:, :margin] = False
        keep[:, lw - margin :] = False
        yy, xx = np.nonzero(keep)
        for x, y in zip(xx, yy):
            us.append(x * scale)
            vs.append(y * scale)
            rs.append(float(score[y, x]))
            angs.append(_orientation(lvl, int(x), int(y)))
            octs.append(octave)
    if not us:
        return []
    us_a, vs_a, rs_a = np.array(us), np.array(vs), np.array(rs)
    # strongest first, raster order among equal responses
    order = np.lexsort((us_a, vs_a, -rs_a))
    g = cfg.grid_cells
    cu = np.minimum((us_a[order] * g / w0).astype(int), g - 1)
    cv = np.minimum((vs_a[order] * g / h0).astype(int), g - 1)
    kept = order[_bucket(cv * g + cu, n_feat, g * g)]
    return [Keypoint(float(us[i]), float(vs[i]), rs[i], angs[i], octs[i]) for i in kept]


# ---------------------------------------------------------------------------
# description


def describe(image: np.ndarray, kps: list[Keypoint], cfg: FeatureConfig | None = None) -> np.ndarray:
    """Rotated binary intensity tests on the smoothed image, one row per keypoint."""
    cfg = cfg or FeatureConfig()
    image = np.asarray(image, dtype=np.uint8)
    out = np.zeros((len(kps), DESCRIPTOR_BYTES), dtype=np.uint8)
    if not kps:
        return out
    levels = {}
    for octave in sorted({kp.octave for kp in kps}):
        scale = cfg.scale_factor**octave
        lvl = image if octave == 0 else _resize(image, scale)
        levels[octave] = (_gaussian_blur(lvl), scale)

    for i, kp in enumerate(kps):
        smooth, scale = levels[kp.octave]
        h, w = smooth.shape
        u = int(round(kp.u / scale))
        v = int(round(kp.v / scale))
        if u - HALF_PATCH < 0 or v - HALF_PATCH < 0 or u + HALF_PATCH >= w or v + HALF_PATCH >= h:
            raise PatchOutOfBounds(f"keypoint ({kp.u:.1f}, {kp.v:.1f}) too close to the border")
        c, s = math.cos(kp.angle), math.sin(kp.angle)
        rot = np.array([[c, -s], [s, c]])
        pts = np.rint(TEST_PATTERN @ rot.T).astype(int)  # (256, 2, 2) as (x, y)
        a = smooth[v + pts[:, 0, 1], u + pts[:, 0, 0]]
        b = smooth[v + pts[:, 1, 1], u + pts[:, 1, 0]]
        out[i] = np.packbits(a < b, bitorder="little")
    return out


def detect_and_describe(image: np.ndarray, n_feat: int, cfg: FeatureConfig | None = None):
    kps = detect(image, n_feat, cfg)
    return kps, describe(image, kps, cfg)


# ---------------------------------------------------------------------------
# Hamming distance


def as_words(desc: np.ndarray) -> np.ndarray:
    d = np.ascontiguousarray(desc, dtype=np.uint8)
    return d.reshape(-1, DESCRIPTOR_BYTES).view(np.uint64)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.bitwise_count(as_words(a) ^ as_words(b)).sum())


def hamming_matrix(a: np.ndarray, b: np.ndarray, chunk_elems: int = 1 << 22) -> np.ndarray:
    """All-pairs Hamming distances between the rows of ``a`` and ``b``."""
    wa, wb = as_words(a), as_words(b)
    out = np.empty((len(wa), len(wb)), dtype=np.int32)
    if len(wa) == 0 or len(wb) == 0:
        return out
    step = max(1, chunk_elems // len(wb))
    for s in range(0, len(wa), step):
        # one 64-bit word at a time keeps the temporaries two-dimensional
        acc = np.zeros((min(step, len(wa) - s), len(wb)), dtype=np.uint16)
        for k in range(wa.shape[1]):
            acc += np.bitwise_count(wa[s : s + step, k, None] ^ wb[None, :, k])
        out[s : s + step] = acc
    return out
