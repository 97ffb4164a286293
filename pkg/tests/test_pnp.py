import numpy as np
import pytest

from pnp_cases import instance, random_pose
from stereoloop.core import Pose, RansacConfig
from stereoloop.errors import DegenerateGeometry, NoConsensus, TooFewCorrespondences
from stereoloop.pnp import minimal_pose, p3p, pnp_ransac, refine_pose, reprojection_errors


def pose_error(a: Pose, b: Pose):
    return a.distance_to(b)


@pytest.mark.parametrize("seed", range(5))
def test_exact_recovery(wide_cal, seed):
    rng = np.random.default_rng(seed)
    X, uv, P = instance(rng, wide_cal, 50, (0.5, 40.0))
    est, inl = pnp_ransac(X, uv, wide_cal, seed=seed)
    ang, dist = pose_error(est, P)
    assert ang <= 1e-6 and dist <= 1e-6
    assert len(inl) == 50


def test_identity(wide_cal, rng):
    X, uv, _ = instance(rng, wide_cal, 30, (1.0, 20.0), Pose.identity())
    est, _ = pnp_ransac(X, uv, wide_cal)
    ang, dist = pose_error(est, Pose.identity())
    assert ang <= 1e-6 and dist <= 1e-6


def test_p3p_contains_truth(wide_cal, rng):
    for _ in range(20):
        X, uv, P = instance(rng, wide_cal, 4, (2.0, 30.0))
        sols = p3p(X[:3], uv[:3], wide_cal)
        assert any(np.allclose(R, P.R, atol=1e-6) and np.allclose(t, P.translation, atol=1e-6) for R, t in sols)
        R, t = minimal_pose(X, uv, wide_cal)
        assert np.allclose(R, P.R, atol=1e-6)


def test_outliers_rejected(wide_cal):
    rng = np.random.default_rng(3)
    X, uv, P = instance(rng, wide_cal, 100, (3.0, 7.0))
    bad = rng.choice(100, 30, replace=False)
    uv = uv + rng.normal(0, 1.0, uv.shape)
    uv[bad] = np.column_stack([rng.uniform(0, wide_cal.width, 30), rng.uniform(0, wide_cal.height, 30)])
    est, inl = pnp_ransac(X, uv, wide_cal, seed=0)
    assert not set(bad.tolist()) & set(inl.tolist())
    assert pose_error(est, P)[1] < 0.05


def test_equivariance(wide_cal):
    rng = np.random.default_rng(11)
    for _ in range(10):
        X, uv, P = instance(rng, wide_cal, 40, (1.0, 30.0))
        G = random_pose(rng, 1.0, 5.0)
        a, _ = pnp_ransac(X, uv, wide_cal, seed=1)
        b, _ = pnp_ransac(G.apply(X), uv, wide_cal, seed=1)
        ang, dist = pose_error(b, a.compose(G.inverse()))
        assert ang <= 1e-6 and dist <= 1e-6


def test_refinement_is_monotone(wide_cal):
    rng = np.random.default_rng(5)
    for _ in range(20):
        X, uv, P = instance(rng, wide_cal, 60, (1.0, 30.0))
        uv = uv + rng.normal(0, 2.0, uv.shape)
        start = random_pose(rng, 0.05, 0.2).compose(P)
        R, t, costs = refine_pose(start.R, start.translation, X, uv, wide_cal)
        assert all(b <= a for a, b in zip(costs, costs[1:]))
        assert costs[-1] < costs[0]
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_reprojection_errors_zero_at_truth(wide_cal, rng):
    X, uv, P = instance(rng, wide_cal, 20)
    assert np.max(reprojection_errors(P.R, P.translation, X, uv, wide_cal)) < 1e-9


def test_too_few(wide_cal, rng):
    X, uv, _ = instance(rng, wide_cal, 19)
    with pytest.raises(TooFewCorrespondences):
        pnp_ransac(X, uv, wide_cal, min_inliers=20)


def test_collinear(wide_cal):
    s = np.linspace(1, 10, 30)
    X = np.column_stack([0.1 * s, 0.05 * s, 2 + s])
    uv = np.column_stack([wide_cal.f * X[:, 0] / X[:, 2] + wide_cal.cx, wide_cal.f * X[:, 1] / X[:, 2] + wide_cal.cy])
    with pytest.raises(DegenerateGeometry):
        pnp_ransac(X, uv, wide_cal)


def test_no_consensus(wide_cal):
    rng = np.random.default_rng(9)
    X, _, _ = instance(rng, wide_cal, 40)
    uv = np.column_stack([rng.uniform(0, wide_cal.width, 40), rng.uniform(0, wide_cal.height, 40)])
    with pytest.raises(NoConsensus):
        pnp_ransac(X, uv, wide_cal, RansacConfig(iterations=50))


def test_seeded_determinism(wide_cal):
    rng = np.random.default_rng(4)
    X, uv, _ = instance(rng, wide_cal, 60, (3, 7))
    uv[:15] = rng.uniform(0, 500, (15, 2))
    uv = uv + rng.normal(0, 1.0, uv.shape)
    a, ia = pnp_ransac(X, uv, wide_cal, seed=42)
    b, ib = pnp_ransac(X, uv, wide_cal, seed=42)
    assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)
    assert np.array_equal(ia, ib)
