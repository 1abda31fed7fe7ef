"""Pose correction from map-point biases.

A front-end pose solved against biased map points inherits, to first order,
the error ``-pinv(H_x) @ stack(H_p_i @ mu_p_i)``. This module computes that
expectation from per-point bias estimates, drops implausible biases with an
angular-rate dependent gate, and removes the expected error from the pose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .bias import (
    DepthEstimate,
    MapPoint,
    TwoFrameGeometry,
    aggregate_pairs,
    bias_closed_form,
    build_flow_system,
    debias,
    degenerate_features,
    derotate_bearings,
    map_point_bias,
    point_bias_along_rays,
    solve_inverse_depth,
)
from .errors import (
    DegenerateFeature,
    EmptySystem,
    FoeUndefined,
    RankDeficient,
    TooFewPoints,
)
from .estimator import (
    ResidualSystem,
    SolveReport,
    SolverConfig,
    numerical_rank,
    pseudo_inverse,
    solve_pose,
    stack_residuals,
)
from .geometry import Pose, retract

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GateConfig:
    """Bias thresholds (m) for fast, medium and slow rotation, and the rate breakpoints (rad/s)."""

    thresholds: tuple = (0.1, 0.3, 0.5)
    breakpoints: tuple = (0.3, 0.5)

    def __post_init__(self):
        th, bp = self.thresholds, self.breakpoints
        if len(th) != 3 or len(bp) != 2:
            raise ValueError("need three thresholds and two breakpoints")
        if min(th) <= 0 or not th[0] <= th[1] <= th[2]:
            raise ValueError("thresholds must be positive and non-increasing in angular rate")
        if not bp[0] < bp[1]:
            raise ValueError("breakpoints must be increasing")


def gate_threshold(omega_cam, gate: GateConfig = GateConfig()) -> float:
    """Largest acceptable map-point bias (m) at camera angular velocity ``omega_cam``."""
    rate = float(np.linalg.norm(omega_cam))
    low, high = gate.breakpoints
    if rate >= high:
        return gate.thresholds[0]
    if rate >= low:
        return gate.thresholds[1]
    return gate.thresholds[2]


@dataclass(frozen=True)
class BiasEntry:
    point_id: int
    mu_p: np.ndarray
    bias_inv_depth: float
    accepted: bool = True


@dataclass(frozen=True, eq=False)
class BiasBundle:
    """Per-point bias estimates, stored column-wise, plus the camera angular velocity."""

    point_ids: np.ndarray
    mu_p: np.ndarray
    bias_inv_depth: np.ndarray
    accepted: np.ndarray
    omega_cam: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        ids = np.array(self.point_ids, dtype=np.int64).reshape(-1)
        n = ids.size
        cols = {
            "point_ids": ids,
            "mu_p": np.array(self.mu_p, dtype=float).reshape(n, 3),
            "bias_inv_depth": np.array(self.bias_inv_depth, dtype=float).reshape(n),
            "accepted": np.broadcast_to(np.asarray(self.accepted, dtype=bool), (n,)).copy(),
            "omega_cam": np.array(self.omega_cam, dtype=float).reshape(3),
        }
        for name, arr in cols.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_entries(cls, entries: Sequence[BiasEntry], omega_cam=(0.0, 0.0, 0.0)) -> "BiasBundle":
        entries = list(entries)
        return cls(
            [e.point_id for e in entries],
            np.array([e.mu_p for e in entries], dtype=float).reshape(-1, 3),
            [e.bias_inv_depth for e in entries],
            [e.accepted for e in entries],
            omega_cam,
        )

    def __len__(self) -> int:
        return self.point_ids.size

    @property
    def entries(self) -> tuple:
        return tuple(
            BiasEntry(int(i), m, float(b), bool(a))
            for i, m, b, a in zip(self.point_ids, self.mu_p, self.bias_inv_depth, self.accepted)
        )

    @property
    def n_accepted(self) -> int:
        return int(np.count_nonzero(self.accepted))

    def scaled(self, alpha: float) -> "BiasBundle":
        return BiasBundle(self.point_ids, alpha * self.mu_p, alpha * self.bias_inv_depth, self.accepted, self.omega_cam)


def filter_bias_entries(bundle: BiasBundle, gate: GateConfig = GateConfig()) -> BiasBundle:
    """Flag entries whose bias norm exceeds the gate; nothing is removed."""
    th = gate_threshold(bundle.omega_cam, gate)
    finite = np.all(np.isfinite(bundle.mu_p), axis=1)
    norms = np.linalg.norm(np.where(finite[:, None], bundle.mu_p, 0.0), axis=1)
    accepted = bundle.accepted & finite & (norms <= th)
    return BiasBundle(bundle.point_ids, bundle.mu_p, bundle.bias_inv_depth, accepted, bundle.omega_cam)


def _used_rows(sys: ResidualSystem, bundle: BiasBundle):
    """(system row, bundle row) of every accepted entry that is part of ``sys``."""
    rows = {pid: i for i, pid in enumerate(sys.point_ids)}
    pairs = [(rows[int(pid)], j) for j, pid in enumerate(bundle.point_ids) if bundle.accepted[j] and int(pid) in rows]
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    i, j = np.array(pairs).T
    return i, j


def expected_pose_error(
    sys: ResidualSystem, bundle: BiasBundle, min_points: int = 3, require_full_rank: bool = True
) -> np.ndarray:
    """Expected tangent-space pose error caused by the accepted map-point biases.

    Entries that are rejected or not part of ``sys`` contribute nothing; the
    per-point products ``H_p_i @ mu_p_i`` are accumulated block by block
    instead of forming a stacked selection matrix. With ``require_full_rank``
    a pose Jacobian of rank < 6 raises RankDeficient; otherwise the
    minimum-norm (pseudo-inverse) solution is returned.
    """
    i, j = _used_rows(sys, bundle)
    if i.size < min_points:
        raise TooFewPoints(f"{i.size} accepted points, need {min_points}")
    if require_full_rank and numerical_rank(sys.H_x) < 6:
        raise RankDeficient("pose Jacobian is rank deficient")
    rhs = np.zeros((sys.n, 2))
    rhs[i] = np.einsum("nij,nj->ni", sys.H_p[i], bundle.mu_p[j])
    return -pseudo_inverse(sys.H_x) @ rhs.reshape(-1)


def correct_pose(pose: Pose, expected_error) -> Pose:
    """Remove an expected left-tangent error from ``pose``."""
    return retract(pose, -np.asarray(expected_error, dtype=float))


@dataclass(frozen=True)
class PipelineConfig:
    L_max: int = 4
    correction_enabled: bool = True
    gate_enabled: bool = True
    gate: GateConfig = GateConfig()
    derotate: bool = True
    min_points: int = 3
    solver: SolverConfig = SolverConfig()


@dataclass(frozen=True, eq=False)
class FrameWindow:
    """Snapshot of the frames around one keyframe.

    ``frames`` is ordered oldest first: ``frames[0]`` is the anchor of the
    tracked points and ``frames[-1]`` the keyframe. ``poses`` holds the
    (back-end) poses of every frame except the keyframe, whose front-end
    solve starts from ``initial_pose``.
    """

    frames: tuple
    timestamps: Mapping
    poses: Mapping
    observations: Mapping
    initial_pose: Pose
    omega_cam: np.ndarray

    @property
    def anchor(self):
        return self.frames[0]

    @property
    def keyframe(self):
        return self.frames[-1]


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    expected_error: np.ndarray
    corrected_pose: Pose
    front_end_pose: Pose
    n_used: int
    n_rejected: int
    skipped_reason: Optional[str] = None
    bundle: Optional[BiasBundle] = None
    solve: Optional[SolveReport] = None
    depth: Optional[DepthEstimate] = None

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None


def estimate_window_depths(window: FrameWindow, point_ids: Sequence[int], config: PipelineConfig) -> DepthEstimate:
    """Average two-frame inverse depths (1/z in the anchor frame) over the window's pairs.

    Every pair uses a non-key window frame as the earlier view and the anchor
    as the later one, so each estimate measures depth in the anchor frame.
    Features degenerate in any pair are left out.
    """
    anchor = window.anchor
    pair_frames = list(window.frames[1:-1])[: config.L_max]
    if not pair_frames:
        raise TooFewPoints("window has no frame pairs")
    anchor_pose = window.poses[anchor]
    obs_a = window.observations[anchor]
    ids = [i for i in point_ids if i in obs_a and all(i in window.observations[f] for f in pair_frames)]

    pairs = []
    keep = np.ones(len(ids), dtype=bool)
    for f in pair_frames:
        prev_pose = window.poses[f]
        dt = abs(window.timestamps[anchor] - window.timestamps[f]) or 1.0
        geom = TwoFrameGeometry.from_poses(prev_pose, anchor_pose, dt, derotate=config.derotate)
        obs_f = window.observations[f]
        r = obs_f.rows(ids)
        uv_prev = obs_f.uv[r]
        if config.derotate:
            uv_prev = derotate_bearings(prev_pose, anchor_pose, uv_prev)
        keep &= ~degenerate_features(geom, uv_prev)
        pairs.append((geom, uv_prev, obs_f.sigma2[r]))
    if not keep.any():
        raise DegenerateFeature(range(len(ids)))
    ids = [i for i, k in zip(ids, keep) if k]
    uv_curr = obs_a.uv[obs_a.rows(ids)]

    estimates = []
    for geom, uv_prev, sigma2 in pairs:
        sys = build_flow_system(geom, uv_prev[keep], uv_curr)
        scale = 1.0 / geom.V[2]
        estimates.append(
            DepthEstimate(ids, solve_inverse_depth(sys) * scale, bias_closed_form(sys, geom, sigma2[keep]) * scale)
        )
    return aggregate_pairs(estimates)


def _bundle_for_window(window, tracked_points, depth: DepthEstimate) -> BiasBundle:
    ids = np.array([mp.id for mp in tracked_points], dtype=np.int64)
    d_c_of = dict(zip(depth.point_ids, debias(depth)))
    has = np.array([mp.id in d_c_of and mp.anchor_frame == window.anchor for mp in tracked_points], dtype=bool)
    mu = np.zeros(ids.size)
    mu_p = np.zeros((ids.size, 3))
    if has.any():
        sel = [mp for mp, h in zip(tracked_points, has) if h]
        d_tilde = np.array([mp.inv_depth_tilde for mp in sel])
        mu[has] = map_point_bias(d_tilde, np.array([d_c_of[mp.id] for mp in sel]))
        positions = np.array([mp.position for mp in sel]).reshape(-1, 3)
        mu_p[has] = point_bias_along_rays(positions, d_tilde, mu[has], window.poses[window.anchor])
    return BiasBundle(ids, mu_p, mu, has, window.omega_cam)


def run_keyframe_pipeline(
    window: FrameWindow,
    tracked_points: Sequence[MapPoint],
    config: PipelineConfig = PipelineConfig(),
) -> CorrectionResult:
    """Front-end solve, bias estimation and pose correction for one keyframe.

    Only front-end failures propagate; any failure in the correction stage
    returns the front-end pose unchanged with ``skipped_reason`` set.
    """
    landmarks = {mp.id: mp.position for mp in tracked_points}
    obs_key = window.observations[window.keyframe]
    obs_key = obs_key.subset([i for i in obs_key.point_ids if int(i) in landmarks])
    report = solve_pose(window.initial_pose, landmarks, obs_key, config.solver)
    front = report.pose
    total = len(tracked_points)

    def skipped(reason, bundle=None, depth=None):
        return CorrectionResult(np.zeros(6), front, front, 0, total, reason, bundle, report, depth)

    if not config.correction_enabled:
        return skipped("disabled")
    try:
        depth = estimate_window_depths(window, [mp.id for mp in tracked_points], config)
        bundle = _bundle_for_window(window, tracked_points, depth)
        if config.gate_enabled:
            bundle = filter_bias_entries(bundle, config.gate)
        sys = stack_residuals(front, landmarks, obs_key)
        err = expected_pose_error(sys, bundle, config.min_points)
    except (FoeUndefined, TooFewPoints, RankDeficient, DegenerateFeature, EmptySystem) as exc:
        log.info("keyframe %s: correction skipped (%s: %s)", window.keyframe, type(exc).__name__, exc)
        return skipped(type(exc).__name__)
    n_used = _used_rows(sys, bundle)[0].size
    return CorrectionResult(err, correct_pose(front, err), front, n_used, total - n_used, None, bundle, report, depth)
