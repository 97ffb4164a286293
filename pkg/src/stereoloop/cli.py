"""Command line entry point: ``stereoloop <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import PipelineConfig
from .dataset import Dataset, collect_descriptors
from .errors import DatasetError, StereoLoopError
from .evaluation import GroundTruth, evaluate, threshold_sweep
from .harness import keyframe_scores, run_frames
from .pipeline import LoopDetector, read_detections, write_detections
from .synthetic import SCENARIOS, NoiseConfig, TrajectoryConfig, WorldConfig, generate_synthetic, sample_descriptors
from .vocabulary import VocabularyTree, train

log = logging.getLogger("stereoloop")

DEFAULT_THRESHOLDS = [round(0.05 * k, 2) for k in range(21)]


def _frames(ds: Dataset, keyframes: bool):
    return ds.keyframes() if keyframes else ds.frames


def cmd_train_vocab(args) -> int:
    desc = collect_descriptors(args.source, limit=args.max_descriptors)
    log.info("training on %d descriptors (k_b=%d, L=%d)", len(desc), args.branching, args.depth)
    voc = train(desc, args.branching, args.depth, seed=args.seed)
    voc.save(args.output)
    print(f"{voc.n_words} words written to {args.output}")
    return 0


def cmd_detect(args) -> int:
    cfg = PipelineConfig.load(args.config)
    ds = Dataset(args.dataset)
    voc = VocabularyTree.load(args.vocab)
    det = LoopDetector(voc, ds.calibration, cfg)
    run = run_frames(det, ds.observations(det, _frames(ds, args.keyframes)))
    dets = write_detections(args.output, run.results, args.rejections)
    print(f"{len(dets)} detections from {len(run.results)} frames written to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    dets = read_detections(args.detections)
    gt = GroundTruth.load(args.groundtruth)
    report = evaluate(dets, gt)
    report.save(args.output)
    te = report.summary["translation_error"]
    if te.get("count"):
        print(f"{te['count']} detections, median translation error {te['median']:.4f} m")
    else:
        print("no detections to evaluate")
    return 0


def cmd_sweep(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    ds = Dataset(args.dataset)
    if ds.groundtruth is None:
        raise DatasetError("sweep needs groundtruth.txt for pair distances")
    voc = VocabularyTree.load(args.vocab)
    det = LoopDetector(voc, ds.calibration, cfg)
    frames = _frames(ds, args.keyframes)
    bows = [o.bow for o in ds.observations(det, frames)]
    pairs = keyframe_scores(bows, [f.timestamp for f in frames], ds.positions(frames), cfg.temporal_exclusion)
    rows = threshold_sweep(pairs, args.thresholds)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "count", "min", "q1", "median", "q3", "max"])
        for r in rows:
            w.writerow(["" if v is None else f"{v:.10g}" for v in asdict(r).values()])
    print(f"{len(pairs)} pairs scored, {len(rows)} thresholds written to {args.output}")
    return 0


def cmd_synth(args) -> int:
    world = WorldConfig(n_landmarks=args.landmarks)
    traj = TrajectoryConfig(scenario=args.scenario, laps=args.laps)
    noise = NoiseConfig(sigma_px=args.sigma_px, p_bit=args.p_bit)
    seq = generate_synthetic(world, traj, noise, seed=args.seed)
    out = Path(args.output)
    seq.save(out)
    # a vocabulary training sample from the same appearance model, not from this world
    rng = np.random.default_rng([args.seed, 1])
    np.save(out / "vocab_train.npy", sample_descriptors(world.appearance, args.train_descriptors, rng, noise.p_bit))
    print(f"{len(seq.frames)} keyframes, {len(seq.landmarks)} landmarks written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stereoloop", description="Stereo loop detection with bag of binary words.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-vocab", help="train a vocabulary tree")
    s.add_argument("source", help=".npy descriptor array or dataset directory")
    s.add_argument("output")
    s.add_argument("--branching", type=int, default=10)
    s.add_argument("--depth", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-descriptors", type=int, default=None)
    s.set_defaults(func=cmd_train_vocab)

    s = sub.add_parser("detect", help="run loop detection over a dataset")
    s.add_argument("dataset")
    s.add_argument("vocab")
    s.add_argument("config", help="pipeline configuration (TOML)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--rejections", help="also write rejected queries to this CSV")
    s.add_argument("--keyframes", action="store_true", help="select keyframes from ground truth first")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="score detections against ground truth")
    s.add_argument("detections")
    s.add_argument("groundtruth")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="pair distances above similarity thresholds")
    s.add_argument("dataset")
    s.add_argument("vocab")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--config", help="pipeline configuration (TOML)")
    s.add_argument("--thresholds", type=float, nargs="+", default=DEFAULT_THRESHOLDS)
    s.add_argument("--keyframes", action="store_true", help="select keyframes from ground truth first")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("synth", help="generate a synthetic feature-level dataset")
    s.add_argument("scenario", choices=SCENARIOS)
    s.add_argument("seed", type=int)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--laps", type=int, default=2)
    s.add_argument("--landmarks", type=int, default=WorldConfig.n_landmarks)
    s.add_argument("--sigma-px", type=float, default=1.0)
    s.add_argument("--p-bit", type=float, default=0.05)
    s.add_argument("--train-descriptors", type=int, default=300_000)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StereoLoopError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
