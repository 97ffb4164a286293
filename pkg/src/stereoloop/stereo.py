"""Rectified stereo matching, triangulation, depth gating and cross-frame
descriptor matching.

Keypoint positions are passed around as ``(N, 2)`` float arrays of ``(u, v)``
pixels and descriptors as ``(N, 32)`` uint8 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CameraCalibration, MatchingConfig
from .errors import LengthMismatch, ZeroDisparity
from .features import as_words, hamming_matrix


@dataclass(frozen=True)
class StereoMatch:
    left: int
    right: int
    disparity: float
    distance: int


@dataclass(frozen=True, eq=False)
class Landmark3D:
    xyz: np.ndarray
    source: int


@dataclass(frozen=True)
class CrossFrameCorrespondence:
    query: int
    candidate: int
    distance: int


def mutual_best(i: np.ndarray, j: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Mask of candidate pairs that are each other's best match.

    Ties resolve to the lowest partner index on both sides.
    """
    if len(i) == 0:
        return np.zeros(0, dtype=bool)
    by_i = np.lexsort((j, dist, i))
    first_i = np.ones(len(i), dtype=bool)
    first_i[1:] = i[by_i][1:] != i[by_i][:-1]
    best_i = np.zeros(len(i), dtype=bool)
    best_i[by_i[first_i]] = True

    by_j = np.lexsort((i, dist, j))
    first_j = np.ones(len(j), dtype=bool)
    first_j[1:] = j[by_j][1:] != j[by_j][:-1]
    best_j = np.zeros(len(j), dtype=bool)
    best_j[by_j[first_j]] = True
    return best_i & best_j


def _row_candidates(left_uv: np.ndarray, right_uv: np.ndarray, tol: float):
    """All (left, right) pairs within ``tol`` rows and with u_right <= u_left."""
    order = np.argsort(right_uv[:, 1], kind="stable")
    rv = right_uv[order, 1]
    lo = np.searchsorted(rv, left_uv[:, 1] - tol, side="left")
    hi = np.searchsorted(rv, left_uv[:, 1] + tol, side="right")
    counts = hi - lo
    ii = np.repeat(np.arange(len(left_uv)), counts)
    starts = np.repeat(lo - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    jj = order[starts + np.arange(len(ii))]
    ok = right_uv[jj, 0] <= left_uv[ii, 0]
    return ii[ok], jj[ok]


def stereo_match_arrays(left_uv, left_desc, right_uv, right_desc, cfg: MatchingConfig | None = None):
    """Vectorised core of :func:`stereo_match`.

    Returns ``(left_idx, right_idx, disparity, distance)`` sorted by left index.
    Matches are mutual-best among candidates on the same row band with
    non-negative disparity; zero-disparity winners are then dropped (points
    at infinity cannot be triangulated).
    """
    cfg = cfg or MatchingConfig()
    left_uv = np.asarray(left_uv, dtype=float).reshape(-1, 2)
    right_uv = np.asarray(right_uv, dtype=float).reshape(-1, 2)
    empty = (np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0, int))
    if len(left_uv) == 0 or len(right_uv) == 0:
        return empty
    ii, jj = _row_candidates(left_uv, right_uv, cfg.row_tolerance)
    if len(ii) == 0:
        return empty
    wl, wr = as_words(left_desc), as_words(right_desc)
    dist = np.bitwise_count(wl[ii] ^ wr[jj]).sum(axis=1).astype(int)
    ok = dist <= cfg.max_hamming
    ii, jj, dist = ii[ok], jj[ok], dist[ok]
    keep = mutual_best(ii, jj, dist)
    ii, jj, dist = ii[keep], jj[keep], dist[keep]
    disp = left_uv[ii, 0] - right_uv[jj, 0]
    pos = disp > 0
    ii, jj, dist, disp = ii[pos], jj[pos], dist[pos], disp[pos]
    order = np.argsort(ii, kind="stable")
    return ii[order], jj[order], disp[order], dist[order]


def stereo_match(left_uv, left_desc, right_uv, right_desc, cfg: MatchingConfig | None = None) -> list[StereoMatch]:
    li, ri, disp, dist = stereo_match_arrays(left_uv, left_desc, right_uv, right_desc, cfg)
    return [StereoMatch(int(a), int(b), float(d), int(h)) for a, b, d, h in zip(li, ri, disp, dist)]


def triangulate(m: StereoMatch, left_uv, right_uv, cal: CameraCalibration) -> Landmark3D:
    """Depth from disparity in the left-camera frame."""
    ul, vl = (float(x) for x in np.asarray(left_uv, dtype=float).reshape(-1, 2)[m.left])
    ur = float(np.asarray(right_uv, dtype=float).reshape(-1, 2)[m.right][0])
    d = ul - ur
    if d == 0:
        raise ZeroDisparity("cannot triangulate a zero-disparity match")
    return Landmark3D(triangulate_points(np.array([[ul, vl]]), np.array([d]), cal)[0], m.left)


def triangulate_points(left_uv: np.ndarray, disparity: np.ndarray, cal: CameraCalibration) -> np.ndarray:
    uv = np.asarray(left_uv, dtype=float).reshape(-1, 2)
    d = np.asarray(disparity, dtype=float).reshape(-1)
    if np.any(d == 0):
        raise ZeroDisparity("cannot triangulate a zero-disparity match")
    Z = cal.f * cal.baseline / d
    return np.column_stack([(uv[:, 0] - cal.cx) * Z / cal.f, (uv[:, 1] - cal.cy) * Z / cal.f, Z])


def depth_window_mask(depths: np.ndarray, depth_min: float, depth_max: float) -> np.ndarray:
    depths = np.asarray(depths, dtype=float)
    return (depths >= depth_min) & (depths <= depth_max)


def depth_filter(lms: Sequence[Landmark3D], query_links: Sequence, cfg) -> tuple[list, list]:
    """Drop landmarks outside ``[cfg.depth_min, cfg.depth_max]`` and their links."""
    if len(lms) != len(query_links):
        raise LengthMismatch(f"{len(lms)} landmarks vs {len(query_links)} links")
    keep = [k for k, lm in enumerate(lms) if cfg.depth_min <= float(lm.xyz[2]) <= cfg.depth_max]
    return [lms[k] for k in keep], [query_links[k] for k in keep]


def cross_match_arrays(query_desc: np.ndarray, cand_desc: np.ndarray, max_hamming: int):
    """Exhaustive mutual-best matching; returns ``(query_idx, cand_idx, distance)``."""
    if len(query_desc) == 0 or len(cand_desc) == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    D = hamming_matrix(query_desc, cand_desc)
    best_c = D.argmin(axis=1)
    best_q = D.argmin(axis=0)
    qi = np.arange(len(query_desc))
    dist = D[qi, best_c]
    keep = (best_q[best_c] == qi) & (dist <= max_hamming)
    return qi[keep], best_c[keep], dist[keep].astype(int)


def cross_match(query, cand, cfg: MatchingConfig | None = None) -> list[CrossFrameCorrespondence]:
    """Left-to-left mutual-best matches between two stereo observations.

    Both observations hold only stereo-surviving keypoints, so each
    correspondence also links the two right images.
    """
    cfg = cfg or MatchingConfig()
    qi, ci, dist = cross_match_arrays(query.left_desc, cand.left_desc, cfg.max_hamming)
    return [CrossFrameCorrespondence(int(a), int(b), int(d)) for a, b, d in zip(qi, ci, dist)]
