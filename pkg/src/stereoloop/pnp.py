"""Robust Perspective-n-Point: P3P minimal hypotheses inside a RANSAC loop,
followed by damped Gauss-Newton refinement of the pose on the inliers.

The recovered :class:`~stereoloop.core.Pose` maps landmark coordinates into
the camera frame of the observed pixels: ``pixel ~ project(cal, P.apply(X))``.
"""

from __future__ import annotations

import math

import numpy as np

from .core import CameraCalibration, Pose, RansacConfig, so3_exp
from .errors import DegenerateGeometry, NoConsensus, TooFewCorrespondences

MIN_SAMPLE = 4
RANSAC_CHUNK = 32


def reprojection_errors(R, t, X, uv, cal: CameraCalibration) -> np.ndarray:
    """Pixel distance per point; points at or behind the camera get ``inf``."""
    Xc = X @ R.T + t
    z = Xc[:, 2]
    err = np.full(len(X), np.inf)
    ok = z > 1e-9
    u = cal.f * Xc[ok, 0] / z[ok] + cal.cx
    v = cal.f * Xc[ok, 1] / z[ok] + cal.cy
    err[ok] = np.hypot(u - uv[ok, 0], v - uv[ok, 1])
    return err


# ---------------------------------------------------------------------------
# minimal solver


def _absolute_orientation(pw: np.ndarray, pc: np.ndarray):
    """Least-squares rigid ``(R, t)`` with ``pc ~ R pw + t``; stacked ``(M, k, 3)`` inputs."""
    mw, mc = pw.mean(axis=1, keepdims=True), pc.mean(axis=1, keepdims=True)
    H = np.swapaxes(pc - mc, 1, 2) @ (pw - mw)
    U, _, Vt = np.linalg.svd(H)
    sign = np.where(np.linalg.det(U @ Vt) >= 0, 1.0, -1.0)
    U = U.copy()
    U[:, :, 2] *= sign[:, None]
    R = U @ Vt
    t = mc[:, 0] - np.einsum("mij,mj->mi", R, mw[:, 0])
    return R, t


def bearings(uv: np.ndarray, cal: CameraCalibration) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    rays = np.stack([(uv[..., 0] - cal.cx) / cal.f, (uv[..., 1] - cal.cy) / cal.f, np.ones(uv.shape[:-1])], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def p3p_batch(X: np.ndarray, uv: np.ndarray, cal: CameraCalibration):
    """Grunert's three-point solution for a stack of ``(N, 3, 3)`` points and ``(N, 3, 2)`` pixels.

    The distances from the camera centre to the three points follow from
    the law of cosines reduced to a quartic in the ratio of two of them.
    Returns ``(sample, R, t)`` with one entry per real, positive solution
    (up to four per sample).
    """
    X = np.asarray(X, dtype=float)
    j = bearings(uv, cal)
    a2 = np.sum((X[:, 1] - X[:, 2]) ** 2, axis=1)
    b2 = np.sum((X[:, 0] - X[:, 2]) ** 2, axis=1)
    c2 = np.sum((X[:, 0] - X[:, 1]) ** 2, axis=1)
    ok = np.minimum(np.minimum(a2, b2), c2) > 1e-18
    b2 = np.where(ok, b2, 1.0)
    ca = np.sum(j[:, 1] * j[:, 2], axis=1)
    cb = np.sum(j[:, 0] * j[:, 2], axis=1)
    cg = np.sum(j[:, 0] * j[:, 1], axis=1)
    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    A4 = (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    A3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb)
    A2 = 2.0 * (
        amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
        - 4.0 * apc * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg
    )
    A1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg)
    A0 = (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg * cg
    coeffs = np.stack([A4, A3, A2, A1, A0], axis=1)
    scale = np.max(np.abs(coeffs), axis=1)
    ok &= np.all(np.isfinite(coeffs), axis=1) & (scale > 1e-300)
    # a vanishing leading coefficient would need a lower-degree solve; such samples are skipped
    ok &= np.abs(A4) > 1e-12 * np.where(ok, scale, 1.0)
    idx = np.flatnonzero(ok)
    empty = (np.zeros(0, int), np.zeros((0, 3, 3)), np.zeros((0, 3)))
    if len(idx) == 0:
        return empty

    # quartic roots as companion-matrix eigenvalues
    C = np.zeros((len(idx), 4, 4))
    C[:, 0, :] = -coeffs[idx, 1:] / coeffs[idx, :1]
    C[:, 1, 0] = C[:, 2, 1] = C[:, 3, 2] = 1.0
    roots = np.linalg.eigvals(C)
    real = np.abs(roots.imag) <= 1e-6 * np.maximum(1.0, np.abs(roots.real))
    si, ri = np.nonzero(real)
    n = idx[si]
    v = roots.real[si, ri]
    for _ in range(2):  # Newton polish
        p = (((A4[n] * v + A3[n]) * v + A2[n]) * v + A1[n]) * v + A0[n]
        d = ((4.0 * A4[n] * v + 3.0 * A3[n]) * v + 2.0 * A2[n]) * v + A1[n]
        v = v - np.divide(p, d, out=np.zeros_like(p), where=d != 0)
    denom = 2.0 * (cg[n] - v * ca[n])
    good = np.abs(denom) >= 1e-12
    u = ((-1.0 + amc[n]) * v * v - 2.0 * amc[n] * cb[n] * v + 1.0 + amc[n]) / np.where(good, denom, 1.0)
    q = 1.0 + u * u - 2.0 * u * cg[n]
    good &= (q > 0) & (u > 0) & (v > 0)
    n, u, v, q = n[good], u[good], v[good], q[good]
    if len(n) == 0:
        return empty
    s1 = np.sqrt(c2[n] / q)
    pc = np.stack([s1, u * s1, v * s1], axis=1)[:, :, None] * j[n]
    R, t = _absolute_orientation(X[n], pc)
    return n, R, t


def p3p(X: np.ndarray, uv: np.ndarray, cal: CameraCalibration) -> list[tuple[np.ndarray, np.ndarray]]:
    """Up to four ``(R, t)`` candidates from three correspondences."""
    X = np.asarray(X, dtype=float)[None, :3]
    uv = np.asarray(uv, dtype=float)[None, :3]
    _, R, t = p3p_batch(X, uv, cal)
    return list(zip(R, t))


def _project_stack(R, t, X, cal):
    """Pixels of ``X`` (``(n, 3)``) under each of ``M`` poses; ``(M, n, 2)`` plus depths."""
    Xc = np.einsum("mij,nj->mni", R, X) + t[:, None, :]
    z = Xc[..., 2]
    zs = np.where(z > 1e-9, z, 1.0)
    uv = np.stack([cal.f * Xc[..., 0] / zs + cal.cx, cal.f * Xc[..., 1] / zs + cal.cy], axis=-1)
    return uv, z


def minimal_pose_batch(X: np.ndarray, uv: np.ndarray, cal: CameraCalibration):
    """Best P3P candidate per 4-point sample, judged on the fourth point.

    ``X`` is ``(N, 4, 3)`` and ``uv`` ``(N, 4, 2)``.  Returns ``(samples, R, t)``
    for the samples that produced a candidate.
    """
    n, R, t = p3p_batch(X[:, :3], uv[:, :3], cal)
    if len(n) == 0:
        return n, R, t
    Xc = np.einsum("mij,mj->mi", R, X[n, 3]) + t
    z = Xc[:, 2]
    zs = np.where(z > 1e-9, z, 1.0)
    err = np.hypot(cal.f * Xc[:, 0] / zs + cal.cx - uv[n, 3, 0], cal.f * Xc[:, 1] / zs + cal.cy - uv[n, 3, 1])
    err = np.where(z > 1e-9, err, np.inf)
    # first candidate with the smallest error per sample
    order = np.lexsort((np.arange(len(n)), err, n))
    first = np.ones(len(order), dtype=bool)
    first[1:] = n[order][1:] != n[order][:-1]
    pick = order[first]
    return n[pick], R[pick], t[pick]


def minimal_pose(X: np.ndarray, uv: np.ndarray, cal: CameraCalibration):
    """Pose from four correspondences: P3P on three, the fourth disambiguates."""
    n, R, t = minimal_pose_batch(np.asarray(X, float)[None, :4], np.asarray(uv, float)[None, :4], cal)
    return (R[0], t[0]) if len(n) else None


# ---------------------------------------------------------------------------
# refinement


def _residuals(R, t, X, uv, cal):
    Xc = X @ R.T + t
    z = Xc[:, 2]
    r = np.empty(2 * len(X))
    r[0::2] = cal.f * Xc[:, 0] / z + cal.cx - uv[:, 0]
    r[1::2] = cal.f * Xc[:, 1] / z + cal.cy - uv[:, 1]
    return r, Xc


def refine_pose(R, t, X, uv, cal: CameraCalibration, max_iterations: int = 50, step_tol: float = 1e-10):
    """Damped Gauss-Newton on the summed squared reprojection error.

    The increment is a 6-vector ``(omega, delta)`` applied as
    ``R <- exp(omega) R``, ``t <- exp(omega) t + delta``.  Steps that do
    not reduce the cost are rejected and the damping raised, so the cost
    sequence is non-increasing.  Returns ``(R, t, costs)``.
    """
    X = np.asarray(X, dtype=float)
    uv = np.asarray(uv, dtype=float)
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    r, Xc = _residuals(R, t, X, uv, cal)
    if np.any(Xc[:, 2] <= 0):
        raise DegenerateGeometry("refinement started with points behind the camera")
    cost = float(r @ r)
    costs = [cost]
    lam = 1e-6
    for _ in range(max_iterations):
        x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
        fz = cal.f / z
        du = np.column_stack([fz, np.zeros_like(z), -fz * x / z])
        dv = np.column_stack([np.zeros_like(z), fz, -fz * y / z])
        # d Xc / d omega = -[Xc]_x ; d Xc / d delta = I
        J = np.empty((2 * len(X), 6))
        for rows, d in ((slice(0, None, 2), du), (slice(1, None, 2), dv)):
            J[rows, 0] = d[:, 1] * -z + d[:, 2] * y
            J[rows, 1] = d[:, 0] * z + d[:, 2] * -x
            J[rows, 2] = d[:, 0] * -y + d[:, 1] * x
            J[rows, 3:] = d
        H = J.T @ J
        g = J.T @ r
        if np.linalg.cond(H) > 1e14:
            raise DegenerateGeometry("pose normal equations are singular")
        accepted = False
        while lam < 1e12:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
            dR = so3_exp(step[:3])
            R_new, t_new = dR @ R, dR @ t + step[3:]
            r_new, Xc_new = _residuals(R_new, t_new, X, uv, cal)
            new_cost = float(r_new @ r_new) if np.all(Xc_new[:, 2] > 0) else np.inf
            if new_cost <= cost:
                R, t, r, Xc, cost = R_new, t_new, r_new, Xc_new, new_cost
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                break
            lam *= 10.0
            if np.linalg.norm(step) < step_tol:
                break
        costs.append(cost)
        if not accepted or np.linalg.norm(step) < step_tol:
            break
    # re-orthonormalise accumulated rotation
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return R, t, costs


# ---------------------------------------------------------------------------
# RANSAC


def _is_degenerate_sample(X: np.ndarray) -> bool:
    # P3P only needs the first three points to span a triangle
    (ax, ay, az), (bx, by, bz) = (X[1] - X[0]).tolist(), (X[2] - X[0]).tolist()
    area = math.sqrt((ay * bz - az * by) ** 2 + (az * bx - ax * bz) ** 2 + (ax * by - ay * bx) ** 2)
    return area <= 1e-9 * max(ax * ax + ay * ay + az * az, bx * bx + by * by + bz * bz, 1e-300)


def pnp_ransac(
    landmarks,
    pixels,
    cal: CameraCalibration,
    cfg: RansacConfig | None = None,
    min_inliers: int = 20,
    seed=None,
):
    """Estimate the pose taking ``landmarks`` into the frame of ``pixels``.

    Returns ``(Pose, inlier_indices)``.  ``seed`` overrides ``cfg.seed``;
    anything accepted by ``np.random.default_rng`` works.
    """
    cfg = cfg or RansacConfig()
    X = np.asarray(landmarks, dtype=float).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(X)
    floor = max(MIN_SAMPLE, min_inliers)
    if n != len(uv):
        raise ValueError("landmark and pixel counts differ")
    if n < floor:
        raise TooFewCorrespondences(f"{n} correspondences, need {floor}")
    spread = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    if spread[1] < 1e-9 * max(spread[0], 1e-300):
        raise DegenerateGeometry("landmarks are collinear")

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    thr = cfg.threshold_px
    best_mask, best_score, best_hyp = None, (-1, np.inf), None
    needed = cfg.iterations
    it = 0
    while it < min(needed, cfg.iterations):
        # hypotheses are built and scored a chunk at a time, then consumed in order
        m = min(RANSAC_CHUNK, cfg.iterations - it)
        samples = np.argpartition(rng.random((m, n)), MIN_SAMPLE - 1, axis=1)[:, :MIN_SAMPLE]
        usable = np.array([not _is_degenerate_sample(X[sm]) for sm in samples], dtype=bool)
        hyp_of = np.full(m, -1)
        sm_idx, Rs, ts = minimal_pose_batch(X[samples[usable]], uv[samples[usable]], cal)
        hyp_of[np.flatnonzero(usable)[sm_idx]] = np.arange(len(sm_idx))
        if len(sm_idx):
            proj, z = _project_stack(Rs, ts, X, cal)
            errs = np.where(z > 1e-9, np.hypot(proj[..., 0] - uv[:, 0], proj[..., 1] - uv[:, 1]), np.inf)
        for k in range(m):
            if it >= min(needed, cfg.iterations):
                break
            it += 1
            h = hyp_of[k]
            if h < 0:
                continue
            err = errs[h]
            mask = err <= thr
            score = (int(mask.sum()), float(err[mask].sum()))
            if score[0] > best_score[0] or (score[0] == best_score[0] and score[1] < best_score[1]):
                best_mask, best_score, best_hyp = mask, score, (Rs[h], ts[h])
                w = score[0] / n
                if w >= 1.0:
                    needed = 0
                elif w > 0:
                    denom = math.log(1.0 - w**MIN_SAMPLE)
                    if denom < 0:
                        needed = math.ceil(math.log(1.0 - cfg.confidence) / denom)

    if best_mask is None:
        raise DegenerateGeometry("no non-degenerate minimal sample found")
    if best_score[0] < floor:
        raise NoConsensus(f"best consensus has {best_score[0]} inliers, need {floor}")

    mask = best_mask
    R, t = best_hyp
    for _ in range(3):
        inl = np.flatnonzero(mask)
        R, t, _ = refine_pose(R, t, X[inl], uv[inl], cal, cfg.refine_max_iterations, cfg.refine_step_tol)
        new_mask = reprojection_errors(R, t, X, uv, cal) <= thr
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
        if mask.sum() < floor:
            break
    inliers = np.flatnonzero(mask)
    if len(inliers) < floor:
        raise NoConsensus(f"{len(inliers)} inliers after refinement, need {floor}")
    return Pose.from_matrix(R, t), inliers
