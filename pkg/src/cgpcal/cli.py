"""Command-line entry point: ``cgpcal {simulate,train,evaluate,metrics}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import NumericalError, ValidationError
from .gp import FitSettings
from .metrics import align_by_time, evaluate
from .pipeline import ModelKind, TrainSettings, predict_arrays, train
from .pose import chain_arr
from .sim import simulate

log = logging.getLogger("cgpcal")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _config(args) -> io.Config:
    cfg = io.load_config(args.config) if args.config else io.default_config()
    if args.seed is not None:
        cfg.simulation["seed"] = args.seed
        cfg.calibration["seed"] = args.seed
    return cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sim_cfg = io.sim_config_from(cfg, args.config or "<defaults>")
    out = Path(args.out or cfg.evaluation["out_dir"])
    result = simulate(sim_cfg)
    counts = io.write_simulation(out, result)
    for name, n in counts.items():
        print(f"{out / name}: {n} rows")
    return EXIT_OK


def _train_settings(cfg: io.Config) -> TrainSettings:
    c = cfg.calibration
    fit = FitSettings(n_starts=c["n_starts"], max_iter=c["max_iter"], seed=c["seed"],
                      max_points=c["max_fit_points"] or None)
    return TrainSettings(huber_c=c["huber_c"], fit=fit)


def cmd_train(args) -> int:
    cfg = _config(args)
    if not args.dataset or not args.model:
        raise ValidationError("train needs --dataset and --model")
    samples = io.read_dataset(args.dataset)
    stride = cfg.calibration["edge_stride"]
    if stride < 1:
        raise ValidationError("edge_stride must be >= 1")
    samples = samples[::stride]
    kind = ModelKind(cfg.calibration["model_kind"])
    run = train(samples, kind, _train_settings(cfg), train_id=str(args.dataset),
                config=dict(cfg.calibration))
    io.save_model(args.model, run)
    report = {"kind": kind.value, "n_train": len(samples), **run.report}
    io.write_kv(str(args.model) + ".report.txt", report)
    print(f"{args.model}: {kind.value} model, {len(samples)} samples, {run.wall_time:.3f} s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    if not args.model or not args.dataset:
        raise ValidationError("evaluate needs --model and --dataset")
    run = io.load_model(args.model)
    samples = io.read_dataset(args.dataset)
    if samples[0].m != run.m:
        raise ValidationError(f"model expects {run.m} ticks, dataset has {samples[0].m}")
    out = Path(args.out or cfg.evaluation["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ticks = np.array([s.ticks for s in samples], dtype=float)
    steps, _ = predict_arrays(run, ticks)
    times = np.concatenate([[samples[0].t_j], [s.t_k for s in samples]])

    truth = None
    if args.truth:
        try:
            truth = io.read_truth(args.truth)
        except FileNotFoundError:
            truth = None
    start = np.zeros(3)
    if truth is not None:
        t_ref, _, sensor_ref = truth
        start = sensor_ref[int(np.argmin(np.abs(t_ref - times[0])))]
    est = chain_arr(start, steps)
    n = io.write_trajectory(out / "predicted.csv", times, est)
    print(f"{out / 'predicted.csv'}: {n} rows")
    if truth is None:
        print(f"error: truth file {args.truth!r} not available; metrics skipped", file=sys.stderr)
        return EXIT_VALIDATION
    t_ref, _, sensor_ref = truth
    tol = cfg.evaluation["align_tolerance"]
    if tol is None:
        tol = 0.5 * float(np.median(np.diff(times))) if len(times) > 1 else 0.0
    pair = align_by_time(times, est, t_ref, sensor_ref, tol)
    io.write_trajectory(out / "reference.csv", pair.times, pair.reference)
    return _emit_metrics(out, pair)


def _emit_metrics(out: Path, pair) -> int:
    metrics = evaluate(pair)
    io.write_kv(out / "metrics.txt", metrics)
    keys = list(metrics)
    io._write_rows(out / "metrics.csv", keys, [[metrics[k] for k in keys]])
    print(f"ATE {metrics['ate_m']:.4f} m  RPE {metrics['rpe_mm']:.3f} mm  ({metrics['n_poses']} poses)")
    return EXIT_OK


def cmd_metrics(args) -> int:
    if not args.estimated or not args.reference:
        raise ValidationError("metrics needs --estimated and --reference")
    te, est = io.read_trajectory(args.estimated)
    tr, ref = io.read_trajectory(args.reference)
    tol = args.tolerance
    if tol is None:
        tol = 0.5 * float(np.median(np.diff(te))) if len(te) > 1 else 0.0
    pair = align_by_time(te, est, tr, ref, tol)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return _emit_metrics(out, pair)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgpcal", description="Wheeled-robot sensor motion calibration")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--dataset")
        sp.add_argument("--model")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("simulate", help="generate truth, odometry and dataset CSVs")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("train", help="fit a model to a dataset CSV")
    common(sp)
    sp.set_defaults(func=cmd_train)
    sp = sub.add_parser("evaluate", help="predict a test trajectory and score it")
    common(sp)
    sp.add_argument("--truth")
    sp.set_defaults(func=cmd_evaluate)
    sp = sub.add_parser("metrics", help="ATE/RPE between two trajectory CSVs")
    common(sp)
    sp.add_argument("--estimated")
    sp.add_argument("--reference")
    sp.add_argument("--tolerance", type=float)
    sp.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
