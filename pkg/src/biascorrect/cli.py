"""Command-line driver: ``biascorrect {simulate,run,evaluate,validate}``.

Configuration precedence is flags > config file > defaults. Every output
file goes under the run's output directory. Exit status: 0 on success, 1 on
an error or a failed validation, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, build_run_config, dump_run_config, load_run_config
from .errors import BiasCorrectError
from .evaluation import (
    ape_translation,
    associate,
    format_table,
    load_trajectory,
    save_trajectory,
    write_per_sample_csv,
    write_report_csv,
)
from .runner import LOG_COLUMNS, run_sequence
from .sim import generate_scene
from .validation import FIXTURES, run_fixture

log = logging.getLogger("biascorrect")

SCENE_FILE = "scene.txt"
POINTS_FILE = "points.csv"
GROUND_TRUTH_FILE = "groundtruth.tum"
OMEGA_FILE = "angular_rate.csv"


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["scene.seed"] = args.seed
    if getattr(args, "output", None) is not None:
        overrides["run.output_dir"] = args.output
    if getattr(args, "no_correction", False):
        overrides["run.correction_enabled"] = False
    if getattr(args, "no_gate", False):
        overrides["run.gate_enabled"] = False
    if getattr(args, "alignment", None) is not None:
        overrides["run.alignment"] = args.alignment
    if args.config is None:
        return build_run_config(overrides)
    return load_run_config(args.config, overrides)


def cmd_simulate(cfg: RunConfig) -> Path:
    """Write the resolved config, the landmarks, the ground-truth trajectory and its angular rate."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = generate_scene(cfg.scene)
    (out / SCENE_FILE).write_text(dump_run_config(cfg), encoding="utf-8")
    with open(out / POINTS_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "z"])
        for i, p in zip(gt.point_ids, gt.points):
            w.writerow([int(i), *(repr(float(v)) for v in p)])
    with open(out / OMEGA_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "wx", "wy", "wz", "norm"])
        for t, om in zip(gt.timestamps, gt.omega):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in om), repr(float(np.linalg.norm(om)))])
    save_trajectory(gt.trajectory, out / GROUND_TRUTH_FILE)
    log.info("wrote scene with %d points and %d frames to %s", len(gt.points), len(gt.poses), out)
    return out


def cmd_run(cfg: RunConfig) -> list:
    """Run the pipeline on the simulated scene; returns the APE report rows."""
    out = Path(cfg.output_dir)
    gt_path = out / GROUND_TRUTH_FILE
    if not gt_path.exists():
        raise BiasCorrectError(f"{gt_path} not found; run 'biascorrect simulate' with the same config first")
    gt = generate_scene(cfg.scene)
    stored = load_trajectory(gt_path)
    if len(stored) != len(gt.trajectory) or not np.allclose(stored.positions, gt.trajectory.positions, atol=1e-9):
        raise BiasCorrectError(f"{gt_path} does not match the scene described by the config")
    result = run_sequence(cfg, gt=gt)
    save_trajectory(result.uncorrected, out / "uncorrected.tum")
    save_trajectory(result.corrected, out / "corrected.tum")
    with open(out / "correction_log.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in result.log_rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    unc, cor = result.ape(cfg.alignment)
    seq = f"{cfg.scene.trajectory_kind}-seed{cfg.scene.seed}"
    rows = [unc.row(seq, "uncorrected"), cor.row(seq, "corrected")]
    write_report_csv(rows, out / "ape.csv")
    return rows


def cmd_evaluate(est_path, ref_path, alignment: str = "rigid", max_dt: float = 0.02, output: Optional[str] = None):
    est, ref = load_trajectory(est_path), load_trajectory(ref_path)
    pairs = associate(est, ref, max_dt)
    report = ape_translation(pairs, alignment)
    row = report.row(Path(est_path).stem, alignment)
    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv([row], out / "ape.csv")
        write_per_sample_csv(pairs, report, out / "ape_per_sample.csv")
    return report, row


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biascorrect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override scene.seed")
        p.add_argument("--output", help="override run.output_dir")

    p = sub.add_parser("simulate", help="generate a scene and its ground truth")
    common(p)

    p = sub.add_parser("run", help="run the correction pipeline on a simulated scene")
    common(p)
    p.add_argument("--no-correction", action="store_true", help="disable the correction stage")
    p.add_argument("--no-gate", action="store_true", help="accept every bias estimate")
    p.add_argument("--alignment", choices=("none", "rigid"), help="APE alignment (default from config)")

    p = sub.add_parser("evaluate", help="translation APE of a TUM trajectory against a reference")
    p.add_argument("estimate")
    p.add_argument("reference")
    p.add_argument("--alignment", choices=("none", "rigid"), default="rigid")
    p.add_argument("--max-dt", type=float, default=0.02, help="association window in seconds")
    p.add_argument("--output", help="directory for ape.csv and ape_per_sample.csv")

    p = sub.add_parser("validate", help="run a named Monte Carlo validation suite")
    p.add_argument("fixture", help=f"one of: {', '.join(FIXTURES)}")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            out = cmd_simulate(_resolve_config(args))
            print(f"scene written to {out}")
        elif args.command == "run":
            print(format_table(cmd_run(_resolve_config(args))))
        elif args.command == "evaluate":
            _, row = cmd_evaluate(args.estimate, args.reference, args.alignment, args.max_dt, args.output)
            print(format_table([row]))
        elif args.command == "validate":
            if args.fixture not in FIXTURES:
                print(f"error: unknown fixture {args.fixture!r}; available: {', '.join(FIXTURES)}", file=sys.stderr)
                return 1
            report = run_fixture(args.fixture, args.seed)
            print(report.render())
            return 0 if report.passed else 1
    except (BiasCorrectError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
