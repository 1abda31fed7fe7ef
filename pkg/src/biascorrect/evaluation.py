"""Trajectory containers, absolute pose error and TUM trajectory files.

TUM format: one sample per line, ``timestamp tx ty tz qx qy qz qw`` separated
by whitespace; blank lines and lines starting with ``#`` are ignored. The
pose maps camera to world, the quaternion is scalar-last.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NoMatches, NonMonotonicTimestamps, ParseError
from .geometry import Pose

REPORT_COLUMNS = ("sequence", "variant", "rmse_m", "median_m", "mean_m", "max_m", "n")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses with strictly increasing timestamps."""

    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        poses = tuple(self.poses)
        if ts.shape[0] != len(poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(ts) <= 0):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_samples(cls, samples: Iterable) -> "Trajectory":
        samples = list(samples)
        return cls([t for t, _ in samples], [p for _, p in samples])

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class MatchedPairs:
    """Associated samples of an estimated and a reference trajectory."""

    est_timestamps: np.ndarray
    ref_timestamps: np.ndarray
    est_positions: np.ndarray
    ref_positions: np.ndarray

    def __len__(self) -> int:
        return self.est_positions.shape[0]

    def take(self, index) -> "MatchedPairs":
        index = np.asarray(index)
        return MatchedPairs(
            self.est_timestamps[index], self.ref_timestamps[index], self.est_positions[index], self.ref_positions[index]
        )


def associate(est: Trajectory, ref: Trajectory, max_dt: float = 0.02) -> MatchedPairs:
    """Match samples by nearest timestamp; every sample is used at most once.

    Candidate pairs within ``max_dt`` are accepted greedily in order of
    increasing time difference.
    """
    if len(est) == 0 or len(ref) == 0:
        raise NoMatches("both trajectories must be non-empty")
    te, tr = est.timestamps, ref.timestamps
    lo = np.searchsorted(tr, te - max_dt, side="left")
    hi = np.searchsorted(tr, te + max_dt, side="right")
    cand = [(abs(te[i] - tr[j]), i, j) for i in range(len(te)) for j in range(lo[i], hi[i]) if abs(te[i] - tr[j]) <= max_dt]
    cand.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no timestamps within {max_dt} s")
    pairs.sort()
    ie = np.array([i for i, _ in pairs])
    ir = np.array([j for _, j in pairs])
    return MatchedPairs(te[ie], tr[ir], est.positions[ie], ref.positions[ir])


def rigid_alignment(source, target):
    """Rotation ``R`` and translation ``t`` minimising ``sum |R source_i + t - target_i|^2`` (no scale)."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    if source.shape[0] < 2:
        R = np.eye(3)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            R = Rotation.align_vectors(target - mu_t, source - mu_s)[0].as_matrix()
    return R, mu_t - R @ mu_s


@dataclass(frozen=True, eq=False)
class ApeReport:
    rmse: float
    median: float
    mean: float
    max: float
    per_sample_errors: np.ndarray
    n_matched: int

    def row(self, sequence: str, variant: str) -> dict:
        return {
            "sequence": sequence,
            "variant": variant,
            "rmse_m": self.rmse,
            "median_m": self.median,
            "mean_m": self.mean,
            "max_m": self.max,
            "n": self.n_matched,
        }


def ape_translation(pairs: MatchedPairs, alignment: str = "rigid") -> ApeReport:
    """Translation APE statistics, optionally after rigid alignment of the estimate."""
    if len(pairs) == 0:
        raise NoMatches("no matched pairs")
    est = pairs.est_positions
    if alignment == "rigid":
        R, t = rigid_alignment(est, pairs.ref_positions)
        est = est @ R.T + t
    elif alignment != "none":
        raise ValueError(f"unknown alignment {alignment!r}")
    e = np.linalg.norm(est - pairs.ref_positions, axis=1)
    return ApeReport(
        rmse=float(np.sqrt(np.mean(e**2))),
        median=float(np.median(e)),
        mean=float(np.mean(e)),
        max=float(np.max(e)),
        per_sample_errors=e,
        n_matched=int(e.size),
    )


def load_trajectory(path) -> Trajectory:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) != 8:
                raise ParseError(path, line_no, f"expected 8 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if not np.all(np.isfinite(values)):
                raise ParseError(path, line_no, "non-finite value")
            q = np.array(values[4:])
            if np.linalg.norm(q) == 0:
                raise ParseError(path, line_no, "zero quaternion")
            R = Rotation.from_quat(q).as_matrix()
            samples.append((values[0], Pose(R, values[1:4], timestamp=values[0]), line_no))
    if not samples:
        raise ParseError(path, 0, "file contains no samples")
    for (t0, _, _), (t1, _, n1) in zip(samples, samples[1:]):
        if t1 <= t0:
            raise NonMonotonicTimestamps(f"{path}:{n1}: timestamp {t1!r} does not increase")
    return Trajectory([s[0] for s in samples], [s[1] for s in samples])


def format_tum_line(timestamp: float, pose: Pose) -> str:
    q = Rotation.from_matrix(pose.rotation).as_quat()
    return " ".join("%.17g" % v for v in (timestamp, *pose.translation, *q))


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in traj:
            fh.write(format_tum_line(t, pose) + "\n")


def write_report_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if k.endswith("_m") else v) for k, v in row.items()})


def write_per_sample_csv(pairs: MatchedPairs, report: ApeReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "error_m"])
        for t, e in zip(pairs.ref_timestamps, report.per_sample_errors):
            w.writerow([repr(float(t)), repr(float(e))])


def format_table(rows: Sequence[dict]) -> str:
    header = ["sequence", "variant", "rmse [m]", "median [m]", "mean [m]", "max [m]", "n"]
    body = [
        [r["sequence"], r["variant"], *(f"{r[k]:.6f}" for k in ("rmse_m", "median_m", "mean_m", "max_m")), str(r["n"])]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) if i > 1 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines)
