"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerics error,
3 partial suite failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from swarmdmd import metrics as M
from swarmdmd.experiment import (
    ConfigError,
    ExperimentError,
    default_config,
    error_series,
    fit_model,
    ground_truth,
    load_config,
    load_suite,
    run_experiment,
    run_suite,
    summarize_basic,
)
from swarmdmd.io import load_model, load_trajectory, save_model, save_rollouts, save_trajectory
from swarmdmd.rollout import run_rollout

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3


def _rank(text: str):
    if text.lower() == "full":
        return None
    v = float(text)
    return int(v) if v >= 1 else v


def _config(args):
    cfg = load_config(args.config) if args.config else default_config(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.rank is not None:
        cfg = replace(cfg, rank=args.rank)
    if args.threshold is not None:
        cfg = replace(cfg, threshold=args.threshold)
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def _truth(args, cfg):
    return load_trajectory(args.trajectory) if args.trajectory else ground_truth(cfg)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    traj = ground_truth(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "truth.csv")
    print(f"wrote {traj.n_steps} snapshots of {traj.agent_count} agents to {out / 'truth.csv'}")
    return EXIT_OK


def _train_window(cfg, truth):
    return truth.window(0, truth.index_of(truth.snapshots[0].time + cfg.train_duration) + 1)


def cmd_fit(args) -> int:
    cfg = _config(args)
    truth = _truth(args, cfg)
    model, _ = fit_model(cfg, _train_window(cfg, truth))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.txt")
    print(f"wrote rank-{model.rank} {model.dynamics} model {model.K.shape} to {out / 'model.txt'}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _config(args)
    truth = _truth(args, cfg)
    model = load_model(args.model)
    ro = replace(cfg.rollout, duration=cfg.train_duration + cfg.predict_duration)
    result = run_rollout(model, truth, ro, _train_window(cfg, truth), cfg.velocity_scheme)
    out = Path(cfg.output_dir) / "rollouts"
    paths = save_rollouts(result.trajectories, out)
    print(f"wrote {len(paths)} rollout(s) to {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _config(args)
    truth = _truth(args, cfg)
    pred = load_trajectory(args.prediction, dt=truth.dt)
    series = error_series(truth, pred, cfg.centered_angular_momentum)
    summaries = {k: summarize_basic(s, cfg.train_duration, cfg.threshold, None) for k, s in series.items()}
    rows = [M.SummaryRow(cfg.label, summaries)]
    print(M.format_table(rows), end="")
    if args.out is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, s in series.items():
            M.write_series_csv(s, out / f"series_{k}.csv")
        M.write_table_csv(rows, out / "summary.csv")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg)
    print(M.format_table([report.row]), end="")
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_suite(args) -> int:
    if not args.config:
        raise ConfigError("suite needs --config <suite file>")
    configs, out = load_suite(args.config)
    if args.seed is not None:
        configs = [c.with_seed(args.seed) for c in configs]
    if args.rank is not None:
        configs = [replace(c, rank=args.rank) for c in configs]
    if args.threshold is not None:
        configs = [replace(c, threshold=args.threshold) for c in configs]
    out = args.out if args.out is not None else out
    result = run_suite(configs, out)
    print(result.table, end="")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment (or suite) INI file")
    common.add_argument("--seed", type=int, help="override the simulation seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--rank", type=_rank, help="SVD rank: integer, energy fraction in (0, 1), or 'full'")
    common.add_argument("--threshold", type=float, help="error threshold for time-below (default 0.1)")
    common.add_argument(
        "--scenario", choices=("standard", "milling"), default="standard", help="preset used without --config"
    )

    p = argparse.ArgumentParser(prog="swarmdmd", description="Learn swarm interaction models from trajectories.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate and preprocess ground truth")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("fit", parents=[common], help="fit K on the training window")
    s.add_argument("--trajectory", type=Path, help="ground-truth CSV (default: simulate)")
    s.set_defaults(func=cmd_fit)
    s = sub.add_parser("rollout", parents=[common], help="propagate a fitted model")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--trajectory", type=Path, help="ground-truth CSV (default: simulate)")
    s.set_defaults(func=cmd_rollout)
    s = sub.add_parser("score", parents=[common], help="score a predicted trajectory against ground truth")
    s.add_argument("--prediction", type=Path, required=True)
    s.add_argument("--trajectory", type=Path, help="ground-truth CSV (default: simulate)")
    s.set_defaults(func=cmd_score)
    s = sub.add_parser("run", parents=[common], help="full pipeline for one experiment")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("suite", parents=[common], help="run every experiment listed in a suite file")
    s.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
