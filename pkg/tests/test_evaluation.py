import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereoloop.core import Pose
from stereoloop.errors import EmptyTrajectory, OutOfSpan
from stereoloop.evaluation import (
    GroundTruth,
    ScoredPair,
    camera_rotation,
    evaluate,
    gt_relative_pose,
    pairwise_scores,
    select_keyframes,
    summarize,
    threshold_sweep,
)
from stereoloop.pipeline import DetectionRecord


def det(q, m, qt, mt, t, rot=(0, 0, 0, 1)):
    return DetectionRecord(q, qt, m, mt, Pose(rot, t), 30, 0.5, 1.0)


def line_gt(n=11, step=1.0):
    return GroundTruth(np.arange(n, dtype=float), [Pose(translation=[step * k, 0, 0]) for k in range(n)])


def test_keyframes_translation():
    poses = [Pose(translation=[0.1 * k, 0, 0]) for k in range(51)]
    assert select_keyframes(poses) == list(range(0, 51, 5))


def test_keyframes_rotation():
    poses = [Pose.from_axis_angle([0, 0, math.radians(2 * k)]) for k in range(31)]
    assert select_keyframes(poses) == list(range(0, 31, 5))


def test_keyframes_single_and_empty():
    assert select_keyframes([Pose()]) == [0]
    with pytest.raises(EmptyTrajectory):
        select_keyframes([])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_keyframe_spacing(seed):
    rng = np.random.default_rng(seed)
    poses, p = [], Pose()
    for _ in range(60):
        p = p.compose(Pose.from_axis_angle(rng.normal(0, 0.05, 3), rng.normal(0, 0.15, 3)))
        poses.append(p)
    keys = select_keyframes(poses)
    assert keys[0] == 0
    for a, b in zip(keys, keys[1:]):
        ang, dist = poses[a].distance_to(poses[b])
        assert dist >= 0.5 - 1e-9 or ang >= math.radians(10) - 1e-9


def test_gt_relative_examples():
    gt = line_gt()
    rel = gt_relative_pose(gt, 3.0, 3.0)
    assert rel.rotation_angle() == pytest.approx(0, abs=1e-12)
    assert np.linalg.norm(rel.translation) == pytest.approx(0, abs=1e-12)
    assert np.linalg.norm(gt_relative_pose(gt, 4.0, 3.0).translation) == pytest.approx(1.0)
    gt2 = GroundTruth([0.0, 1.0], [Pose(), Pose(translation=[2, 0, 0])])
    assert gt2.pose_at(0.5).translation == pytest.approx([1, 0, 0], abs=1e-9)
    with pytest.raises(OutOfSpan):
        gt_relative_pose(gt, 11.5, 1.0)


def test_gt_relative_is_in_match_frame():
    a = Pose.from_matrix(camera_rotation(math.pi / 2), [0, 0, 1.5])
    b = Pose.from_matrix(camera_rotation(math.pi / 2), [0, 2, 1.5])
    gt = GroundTruth([0.0, 1.0], [a, b])
    # driving +y with the camera facing +y: the query sits 2 m ahead on camera z
    assert gt_relative_pose(gt, 1.0, 0.0).translation == pytest.approx([0, 0, 2], abs=1e-12)


def test_slerp_midpoint():
    gt = GroundTruth([0.0, 2.0], [Pose(), Pose.from_axis_angle([0, 0, 1.0])])
    assert gt.pose_at(1.0).rotation_angle() == pytest.approx(0.5, abs=1e-12)


def test_evaluate_exact_and_norm_examples():
    gt = line_gt()
    perfect = [det(5, 1, 5.0, 1.0, [4, 0, 0]), det(9, 2, 9.0, 2.0, [7, 0, 0])]
    rep = evaluate(perfect, gt)
    assert rep.summary["translation_error"]["median"] == 0.0
    assert all(r.translation_error == 0.0 for r in rep.records)
    gt2 = GroundTruth([0.0, 1.0], [Pose(), Pose(translation=[1.15, 0, 0])])
    rep = evaluate([det(1, 0, 1.0, 0.0, [1.0, 0, 0])], gt2)
    assert rep.records[0].translation_error == pytest.approx(0.15)
    assert rep.records[0].magnitude_error == pytest.approx(0.15)
    assert rep.records[0].loop_distance == pytest.approx(1.15)


def test_evaluate_metrics_differ_off_axis():
    gt = GroundTruth([0.0, 1.0], [Pose(), Pose(translation=[1, 0, 0])])
    rep = evaluate([det(1, 0, 1.0, 0.0, [0, 1, 0])], gt)
    assert rep.records[0].translation_error == pytest.approx(math.sqrt(2))
    assert rep.records[0].magnitude_error == pytest.approx(0.0)


def test_evaluate_out_of_span_not_fatal():
    rep = evaluate([det(1, 0, 50.0, 0.0, [0, 0, 0]), det(2, 0, 3.0, 0.0, [3, 0, 0])], line_gt())
    assert rep.records[0].error and rep.records[0].translation_error is None
    assert rep.summary["out_of_span"] == 1
    assert rep.summary["translation_error"]["count"] == 1


def test_summary_recomputed_from_records(tmp_path):
    rng = np.random.default_rng(0)
    gt = line_gt(50)
    dets = [det(j, i, float(j), float(i), [j - i + rng.normal(0, 0.2), rng.normal(0, 0.2), 0]) for i, j in zip(range(0, 20), range(25, 45))]
    rep = evaluate(dets, gt)
    rep.save(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    errs = sorted(
        float(np.linalg.norm(np.subtract(r["predicted"], r["ground_truth"]))) for r in data["records"]
    )
    n = len(errs)
    median = (errs[n // 2 - 1] + errs[n // 2]) / 2 if n % 2 == 0 else errs[n // 2]
    assert data["summary"]["translation_error"]["median"] == pytest.approx(median, abs=1e-12)
    assert data["summary"]["translation_error"]["max"] == pytest.approx(errs[-1], abs=1e-12)
    assert data["summary"]["translation_error"]["count"] == n


def test_summarize_empty():
    assert summarize([]) == {"count": 0}


def test_sweep_examples():
    pairs = [ScoredPair(0, 5, s, d) for s, d in [(0.1, 3.0), (0.4, 1.0), (0.7, 0.2), (0.0, 9.0)]]
    rows = threshold_sweep(pairs, [0.0, 0.4, 0.71])
    assert [r.count for r in rows] == [4, 2, 0]
    assert rows[1].min == 0.2 and rows[1].max == 1.0
    assert rows[2].median is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 50)), max_size=40), st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_sweep_monotone(data, thresholds):
    pairs = [ScoredPair(0, 1, s, d) for s, d in data]
    rows = threshold_sweep(pairs, sorted(thresholds))
    counts = [r.count for r in rows]
    assert counts == sorted(counts, reverse=True)


def test_pairwise_scores_exclusion():
    ts = [0.0, 10.0, 20.0, 30.0]
    pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
    pairs = pairwise_scores([None] * 4, ts, pos, 20.0, lambda a, b: 0.5)
    assert [(p.i, p.j) for p in pairs] == [(0, 2), (0, 3), (1, 3)]
    assert [p.distance for p in pairs] == [2.0, 3.0, 2.0]


def test_groundtruth_files(tmp_path):
    gt = GroundTruth([0.0, 1.0, 2.5], [Pose(), Pose.from_axis_angle([0, 0, 0.3], [1, 0, 0]), Pose(translation=[2, 1, 0])])
    gt.save(tmp_path / "g.txt")
    back = GroundTruth.load(tmp_path / "g.txt")
    assert np.allclose(back.timestamps, gt.timestamps)
    for a, b in zip(back.poses, gt.poses):
        assert max(a.distance_to(b)) < 1e-8
    (tmp_path / "p.txt").write_text("# t x y z\n0 0 0 0\n1 0 1 0\n2 0 2 0\n")
    pos_only = GroundTruth.load(tmp_path / "p.txt")
    assert pos_only.synthesized_orientation
    assert np.allclose(pos_only.poses[1].R @ [0, 0, 1], [0, 1, 0], atol=1e-12)
    (tmp_path / "e.txt").write_text("# nothing\n")
    with pytest.raises(EmptyTrajectory):
        GroundTruth.load(tmp_path / "e.txt")
