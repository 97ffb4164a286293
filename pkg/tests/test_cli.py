import csv
import json

import numpy as np
import pytest

from stereoloop.cli import main
from stereoloop.core import CameraCalibration, PipelineConfig
from stereoloop.dataset import Dataset, collect_descriptors
from stereoloop.errors import DatasetError
from stereoloop.features import _gaussian_blur, save_image


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(["synth", "loop", "4", "-o", str(ds), "--landmarks", "60000", "--train-descriptors", "5000"]) == 0
    voc = root / "v.voc"
    assert main(["train-vocab", str(ds / "vocab_train.npy"), str(voc), "--branching", "8", "--depth", "3"]) == 0
    cfg = root / "cfg.toml"
    PipelineConfig().save(cfg)
    return root, ds, voc, cfg


def test_synth_layout(synth_dir):
    _, ds, _, _ = synth_dir
    d = Dataset(ds)
    assert d.kind == "features" and len(d) > 100
    assert d.groundtruth is not None
    meta = json.loads((ds / "synth.json").read_text())
    assert meta["seed"] == 4


def test_detect_evaluate_sweep(synth_dir, capsys):
    root, ds, voc, cfg = synth_dir
    out = root / "det.csv"
    assert main(["detect", str(ds), str(voc), str(cfg), "-o", str(out), "--rejections", str(root / "rej.csv")]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    with open(root / "rej.csv") as fh:
        rej = list(csv.DictReader(fh))
    assert len(rows) + len(rej) == len(Dataset(ds))
    assert {r["reason"] for r in rej} <= {
        "NoCandidates", "BelowNormThreshold", "TemporalInconsistent",
        "TooFewCrossMatches", "TooFewDepthFiltered", "PnPFailed", "TooFewStereoFeatures",
    }
    for r in rows:
        assert float(r["match_ts"]) <= float(r["query_ts"]) - 20.0
        assert int(r["inliers"]) >= 20 and float(r["eta"]) >= 0.3

    rep = root / "report.json"
    assert main(["evaluate", str(out), str(ds / "groundtruth.txt"), "-o", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert data["summary"]["translation_error"]["count"] == len(rows)
    assert len(data["records"]) == len(rows)

    sweep = root / "sweep.csv"
    assert main(["sweep", str(ds), str(voc), "-o", str(sweep), "--thresholds", "0", "0.1", "0.5", "2"]) == 0
    with open(sweep) as fh:
        srows = list(csv.DictReader(fh))
    counts = [int(r["count"]) for r in srows]
    assert counts == sorted(counts, reverse=True) and counts[-1] == 0 and counts[0] > 0


def test_detect_is_byte_identical(synth_dir):
    root, ds, voc, cfg = synth_dir
    for name in ("a.csv", "b.csv"):
        assert main(["detect", str(ds), str(voc), str(cfg), "-o", str(root / name)]) == 0
    assert (root / "a.csv").read_bytes() == (root / "b.csv").read_bytes()


def test_errors_exit_nonzero(synth_dir, tmp_path, capsys):
    root, ds, voc, cfg = synth_dir
    assert main(["detect", str(tmp_path / "missing"), str(voc), str(cfg), "-o", str(tmp_path / "x.csv")]) == 1
    assert "DatasetError" in capsys.readouterr().err
    (tmp_path / "bad.voc").write_bytes(b"nope")
    assert main(["detect", str(ds), str(tmp_path / "bad.voc"), str(cfg), "-o", str(tmp_path / "x.csv")]) == 1
    assert "error:" in capsys.readouterr().err
    (tmp_path / "bad.toml").write_text("alpha = 0.3\n")
    assert main(["detect", str(ds), str(voc), str(tmp_path / "bad.toml"), "-o", str(tmp_path / "x.csv")]) == 1
    assert "ConfigError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["synth", "spiral", "1", "-o", str(tmp_path / "s")])


def test_image_dataset(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "img"
    (root / "left").mkdir(parents=True)
    (root / "right").mkdir()
    CameraCalibration(300.0, 160.0, 120.0, 0.2, 320, 240).save(root / "calib.toml")
    base = _gaussian_blur(rng.uniform(0, 255, (240, 400)).astype(np.uint8), 2.0, 3)
    base = np.clip((base.astype(float) - base.mean()) * 3 + 128, 0, 255).astype(np.uint8)
    lines = []
    for k in range(3):
        save_image(root / "left" / f"{k:04d}.png", base[:, 40 + 5 * k : 360 + 5 * k])
        save_image(root / "right" / f"{k:04d}.png", base[:, 46 + 5 * k : 366 + 5 * k])
        lines.append(f"{k} {k * 0.5}")
    (root / "times.txt").write_text("\n".join(lines) + "\n")
    ds = Dataset(root)
    assert ds.kind == "images" and len(ds) == 3
    desc = collect_descriptors(root, n_feat=300)
    assert desc.shape[1] == 32 and len(desc) > 100
    voc = tmp_path / "v.voc"
    np.save(tmp_path / "d.npy", desc)
    assert main(["train-vocab", str(tmp_path / "d.npy"), str(voc), "--branching", "4", "--depth", "2"]) == 0
    cfg = tmp_path / "c.toml"
    PipelineConfig(n_feat=300).save(cfg)
    assert main(["detect", str(root), str(voc), str(cfg), "-o", str(tmp_path / "d.csv"), "--rejections", str(tmp_path / "r.csv")]) == 0
    with open(tmp_path / "r.csv") as fh:
        rej = list(csv.DictReader(fh))
    assert len(rej) == 3 and all(int(r["stereo"]) > 20 for r in rej)


def test_dataset_validation(tmp_path):
    with pytest.raises(DatasetError):
        Dataset(tmp_path / "nope")
    (tmp_path / "left").mkdir()
    (tmp_path / "right").mkdir()
    CameraCalibration(300.0, 160.0, 120.0, 0.2, 320, 240).save(tmp_path / "calib.toml")
    (tmp_path / "times.txt").write_text("0 0.0\n1 1.0\n")
    with pytest.raises(DatasetError):
        Dataset(tmp_path)
    np.save(tmp_path / "x.npy", np.zeros((3, 31), np.uint8))
    with pytest.raises(DatasetError):
        collect_descriptors(tmp_path / "x.npy")
