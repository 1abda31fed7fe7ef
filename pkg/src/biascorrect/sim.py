"""Synthetic scenes, noisy observations, bias injection and Monte Carlo oracles.

Every random draw comes from a generator keyed by the run seed plus a stream
tag and the frame / chunk index, so results do not depend on execution order
or on the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .bias import TwoFrameGeometry, bias_closed_form, build_flow_system, predict_flow, solve_inverse_depth
from .errors import InfeasibleConfig, UnknownPointId
from .estimator import ResidualSystem, gauss_newton_step
from .evaluation import Trajectory
from .geometry import DEPTH_EPSILON, CameraModel, FrameObservations, Pose, camera_coordinates

TRAJECTORY_KINDS = ("line", "arc", "figure-eight")

# stream tags that keep independent random quantities on separate generators
STREAM_POINTS = 1
STREAM_OBSERVE = 2
STREAM_BIAS = 3
STREAM_DEPTH_MC = 4
STREAM_POSE_MC = 5
STREAM_INJECT = 6

MAX_RESAMPLE_ATTEMPTS = 100
MC_CHUNK = 1000

# trajectory shape constants
ARC_RADIUS = 6.0            # m
EIGHT_PERIOD = 10.0         # s
EIGHT_SIZE = (2.5, 0.6)     # m; lateral and forward amplitude
EIGHT_YAW = 0.85            # rad
EIGHT_PITCH = 0.12          # rad


def thread_count(default: Optional[int] = None) -> int:
    """Worker threads allowed by ``BIASCORRECT_THREADS`` (default: CPU count)."""
    raw = os.environ.get("BIASCORRECT_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"BIASCORRECT_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return default or os.cpu_count() or 1


def ordered_map(fn, items, threads: Optional[int] = None) -> list:
    """``list(map(fn, items))``, possibly on worker threads; output order is the input order."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def seeded_rng(seed, *counters) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *counters])


def covariance_sqrt(cov) -> np.ndarray:
    """Symmetric square root of one or more PSD covariance matrices (singular ones allowed)."""
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def trajectory_state(kind: str, t: float, speed: float = 1.0, heading: float = 0.3):
    """Pose and body-frame angular velocity (rad/s) of the analytic trajectory at time ``t``.

    ``heading`` is the angle between the optical axis and the direction of
    travel for ``line`` and ``arc``; the focus of expansion then lies
    ``tan(heading)`` from the image centre (normalized coordinates).

    * ``line``: constant velocity, no rotation.
    * ``arc``: circle of radius ``ARC_RADIUS`` at constant speed; yaw rate ``speed / ARC_RADIUS``.
    * ``figure-eight``: lemniscate-like path with sinusoidal yaw and pitch;
      the angular rate peaks above 0.5 rad/s and falls below 0.3 rad/s.
    """
    if kind == "line":
        direction = np.array([-np.sin(heading), 0.0, np.cos(heading)])
        return Pose(np.eye(3), speed * t * direction, timestamp=t), np.zeros(3)
    if kind == "arc":
        rate = speed / ARC_RADIUS
        theta = rate * t
        centre = np.array([ARC_RADIUS, 0.0, 0.0])
        p = centre + ARC_RADIUS * np.array([-np.cos(theta), 0.0, np.sin(theta)])
        return Pose(_rot_y(theta - heading), p, timestamp=t), np.array([0.0, rate, 0.0])
    if kind == "figure-eight":
        w = 2.0 * np.pi / EIGHT_PERIOD * speed
        ax, az = EIGHT_SIZE
        p = np.array([ax * np.sin(w * t), 0.0, az * np.sin(2.0 * w * t)])
        yaw, yaw_rate = EIGHT_YAW * np.sin(w * t), EIGHT_YAW * w * np.cos(w * t)
        pitch, pitch_rate = EIGHT_PITCH * np.sin(2.0 * w * t), 2.0 * EIGHT_PITCH * w * np.cos(2.0 * w * t)
        R = _rot_y(yaw) @ _rot_x(pitch)
        omega = np.array([pitch_rate, yaw_rate * np.cos(pitch), -yaw_rate * np.sin(pitch)])
        return Pose(R, p, timestamp=t), omega
    raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {TRAJECTORY_KINDS}")


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 3000
    point_box: Optional[tuple] = None
    trajectory_kind: str = "figure-eight"
    n_frames: int = 200
    frame_dt: float = 0.05
    pixel_sigma: float = 0.5
    seed: int = 0
    speed: float = 1.0
    heading: float = 0.3
    depth_range: tuple = (2.0, 6.0)
    camera: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if not self.frame_dt > 0:
            raise ValueError("frame_dt must be positive")
        if self.pixel_sigma < 0:
            raise ValueError("pixel_sigma must be non-negative")
        if self.trajectory_kind not in TRAJECTORY_KINDS:
            raise ValueError(f"trajectory_kind must be one of {TRAJECTORY_KINDS}")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("depth_range must satisfy 0 < min < max")
        if self.point_box is not None:
            box = np.asarray(self.point_box, dtype=float)
            if box.shape != (2, 3) or np.any(box[0] >= box[1]):
                raise ValueError("point_box must be ((xmin, ymin, zmin), (xmax, ymax, zmax)) with min < max")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    config: SceneConfig
    trajectory: Trajectory
    points: np.ndarray
    point_ids: np.ndarray
    omega: np.ndarray

    @property
    def poses(self) -> tuple:
        return self.trajectory.poses

    @property
    def timestamps(self) -> np.ndarray:
        return self.trajectory.timestamps

    def inverse_depths(self, frame: int, point_ids=None) -> np.ndarray:
        """True ``1/z`` of the points in ``frame`` (non-positive depths give non-positive values)."""
        P = self.points if point_ids is None else self.points[np.asarray(point_ids, dtype=int)]
        return 1.0 / camera_coordinates(self.poses[frame], P)[:, 2]

    def pair_inverse_depths(self, prev: int, curr: int, point_ids=None) -> np.ndarray:
        """True scaled inverse depth ``V_z / z`` for the pair ``prev -> curr`` (rates over the pair interval)."""
        dt = self.timestamps[curr] - self.timestamps[prev]
        geom = TwoFrameGeometry.from_poses(self.poses[prev], self.poses[curr], abs(dt))
        return geom.V[2] * self.inverse_depths(curr, point_ids)


def visibility(poses, points, camera: CameraModel) -> np.ndarray:
    """``(n_frames, n_points)`` mask of points in front of and inside the image of each frame."""
    vis = np.zeros((len(poses), len(points)), dtype=bool)
    for k, pose in enumerate(poses):
        Xc = camera_coordinates(pose, points)
        front = Xc[:, 2] > DEPTH_EPSILON
        uv = np.where(front[:, None], Xc[:, :2] / np.where(front, Xc[:, 2], 1.0)[:, None], np.inf)
        vis[k] = front & camera.contains(uv)
    return vis


def _sample_points(cfg: SceneConfig, poses, rng, n):
    if cfg.point_box is not None:
        lo, hi = np.asarray(cfg.point_box, dtype=float)
        return rng.uniform(lo, hi, size=(n, 3))
    cam = cfg.camera
    frames = rng.integers(0, len(poses), size=n)
    w, h = cam.image_size
    px = rng.uniform([0.05 * w, 0.05 * h], [0.95 * w, 0.95 * h], size=(n, 2))
    depth = rng.uniform(*cfg.depth_range, size=n)
    rays = np.hstack([cam.to_normalized(px), np.ones((n, 1))]) * depth[:, None]
    out = np.empty((n, 3))
    for k in np.unique(frames):
        sel = frames == k
        out[sel] = rays[sel] @ poses[k].rotation.T + poses[k].translation
    return out


def generate_scene(cfg: SceneConfig) -> GroundTruth:
    """Trajectory plus landmarks that are each visible from at least two frames."""
    ts = np.arange(cfg.n_frames) * cfg.frame_dt
    states = [trajectory_state(cfg.trajectory_kind, t, cfg.speed, cfg.heading) for t in ts]
    poses = [s[0] for s in states]
    omega = np.array([s[1] for s in states])

    rng = seeded_rng(cfg.seed, STREAM_POINTS)
    points = _sample_points(cfg, poses, rng, cfg.n_points)
    for _ in range(MAX_RESAMPLE_ATTEMPTS):
        bad = visibility(poses, points, cfg.camera).sum(axis=0) < 2
        if not bad.any():
            break
        points[bad] = _sample_points(cfg, poses, rng, int(bad.sum()))
    else:
        raise InfeasibleConfig(f"{int(bad.sum())} points still seen by fewer than two frames")
    points.flags.writeable = False
    omega.flags.writeable = False
    return GroundTruth(cfg, Trajectory(ts, poses), points, np.arange(cfg.n_points), omega)


def observe(gt: GroundTruth, camera: Optional[CameraModel] = None, pixel_sigma: Optional[float] = None, seed: Optional[int] = None) -> list:
    """Noisy normalized observations of every visible point, one FrameObservations per frame.

    Noise for (frame, point) depends only on the seed, the frame and the point id.
    """
    camera = camera or gt.config.camera
    pixel_sigma = gt.config.pixel_sigma if pixel_sigma is None else pixel_sigma
    seed = gt.config.seed if seed is None else seed
    sigma = pixel_sigma / camera.focal_length
    vis = visibility(gt.poses, gt.points, camera)
    frames = []
    for k, (t, pose) in enumerate(gt.trajectory):
        ids = gt.point_ids[vis[k]]
        Xc = camera_coordinates(pose, gt.points[vis[k]])
        uv = Xc[:, :2] / Xc[:, 2:3]
        if sigma > 0:
            noise = seeded_rng(seed, STREAM_OBSERVE, k).standard_normal((len(gt.points), 2))
            uv = uv + sigma * noise[vis[k]]
        frames.append(FrameObservations(k, ids, uv, sigma**2, timestamp=float(t)))
    return frames


@dataclass(frozen=True, eq=False)
class BiasedMap:
    """Perturbed landmark positions and the offsets applied (``biased - true``)."""

    positions: dict
    offsets: dict


def inject_point_bias(points: Mapping, mean: Mapping, cov=None, seed: int = 0) -> BiasedMap:
    """Shift each point by a draw from ``N(mean[id], cov)``; points without a spec are unchanged.

    ``cov`` may be ``None`` (deterministic shift), one 3x3 matrix or a mapping id -> 3x3.
    """
    unknown = [k for k in mean if k not in points]
    if unknown:
        raise UnknownPointId(f"bias spec references unknown points {unknown[:5]}")
    rng = seeded_rng(seed, STREAM_INJECT)
    positions, offsets = {}, {}
    for pid in sorted(points):
        p = np.asarray(points[pid], dtype=float)
        off = np.asarray(mean.get(pid, np.zeros(3)), dtype=float).copy()
        c = cov.get(pid) if isinstance(cov, Mapping) else cov
        z = rng.standard_normal(3)
        if c is not None and pid in mean:
            off = off + covariance_sqrt(c) @ z
        positions[pid] = p + off
        offsets[pid] = off
    return BiasedMap(positions, offsets)


def inject_inverse_depth_bias(points: Mapping, anchor_pose: Pose, relative_bias: Mapping) -> BiasedMap:
    """Move points along their anchor-frame rays so that ``1/z`` grows by the factor ``1 + beta``."""
    unknown = [k for k in relative_bias if k not in points]
    if unknown:
        raise UnknownPointId(f"bias spec references unknown points {unknown[:5]}")
    positions, offsets = {}, {}
    for pid in sorted(points):
        p = np.asarray(points[pid], dtype=float)
        beta = float(relative_bias.get(pid, 0.0))
        Xa = camera_coordinates(anchor_pose, p)
        q = anchor_pose.rotation @ (Xa / (1.0 + beta)) + anchor_pose.translation if beta else p.copy()
        positions[pid] = q
        offsets[pid] = q - p
    return BiasedMap(positions, offsets)


@dataclass(frozen=True, eq=False)
class DepthBiasMC:
    """Monte Carlo statistics of the two-frame inverse depth per feature."""

    bias: np.ndarray
    se: np.ndarray
    mean_d_hat: np.ndarray
    mean_d_c: np.ndarray
    se_d_c: np.ndarray
    n_trials: int


def monte_carlo_depth_bias(geom: TwoFrameGeometry, uv, d_true, sigma2, n_trials: int, seed: int, threads: Optional[int] = None) -> DepthBiasMC:
    """Empirical bias of the two-frame inverse depth under isotropic image noise.

    ``uv`` are the earlier-frame normalized points and ``d_true`` their scaled
    inverse depths; the later-frame points follow from the flow model. Each
    trial perturbs both images with ``N(0, sigma2)``, rebuilds the flow system
    and solves it. Every trial also evaluates the closed-form bias on its own
    noisy system, giving the bias-compensated estimate ``d_c``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    d_true = np.asarray(d_true, dtype=float).reshape(-1)
    n = uv.shape[0]
    uv_curr = uv + predict_flow(geom, uv, d_true) * geom.dt
    sigma = np.sqrt(np.broadcast_to(np.asarray(sigma2, dtype=float), (n,)))
    s2 = sigma**2
    n_chunks = -(-n_trials // MC_CHUNK)

    def run_chunk(c):
        m = min(MC_CHUNK, n_trials - c * MC_CHUNK)
        e = seeded_rng(seed, STREAM_DEPTH_MC, c).standard_normal((4, m, n)) * sigma
        prev = (uv + np.stack([e[0], e[1]], axis=-1)).reshape(-1, 2)
        curr = (uv_curr + np.stack([e[2], e[3]], axis=-1)).reshape(-1, 2)
        sys = build_flow_system(geom, prev, curr)
        d_hat = solve_inverse_depth(sys)
        d_c = d_hat - bias_closed_form(sys, geom, np.tile(s2, m))
        return d_hat.reshape(m, n), d_c.reshape(m, n)

    parts = ordered_map(run_chunk, range(n_chunks), threads)
    d_hat = np.concatenate([p[0] for p in parts])
    d_c = np.concatenate([p[1] for p in parts])
    root = np.sqrt(n_trials)
    se = d_hat.std(axis=0, ddof=1) / root if n_trials > 1 else np.zeros(n)
    se_c = d_c.std(axis=0, ddof=1) / root if n_trials > 1 else np.zeros(n)
    mean = d_hat.mean(axis=0)
    return DepthBiasMC(mean - d_true, se, mean, d_c.mean(axis=0), se_c, n_trials)


@dataclass(frozen=True, eq=False)
class PoseErrorMC:
    mean: np.ndarray
    se: np.ndarray
    n_trials: int


def monte_carlo_pose_error(
    sys: ResidualSystem,
    bias_mean,
    bias_cov=None,
    noise_sigma2=0.0,
    n_trials: int = 10_000,
    seed: int = 0,
    threads: Optional[int] = None,
) -> PoseErrorMC:
    """Empirical mean one-step Gauss-Newton pose error on a linearized system.

    Per trial the map errors ``eps_p ~ N(bias_mean, bias_cov)`` and the
    measurement errors ``eps_z ~ N(0, noise_sigma2)`` form the residual
    ``H_p eps_p + eps_z`` at the true pose, and the pose error is the step
    that the solver takes from there.
    """
    n = sys.n
    mu = np.broadcast_to(np.asarray(bias_mean, dtype=float), (n, 3))
    if bias_cov is None:
        L = np.zeros((n, 3, 3))
    else:
        L = covariance_sqrt(np.broadcast_to(np.asarray(bias_cov, dtype=float), (n, 3, 3)))
    sz = np.sqrt(np.broadcast_to(np.asarray(noise_sigma2, dtype=float), (2 * n,)))
    n_chunks = -(-n_trials // MC_CHUNK)

    def run_chunk(c):
        m = min(MC_CHUNK, n_trials - c * MC_CHUNK)
        rng = seeded_rng(seed, STREAM_POSE_MC, c)
        eps_p = mu + np.einsum("nij,tnj->tni", L, rng.standard_normal((m, n, 3)))
        eps_z = rng.standard_normal((m, 2 * n)) * sz
        r = np.einsum("nij,tnj->tni", sys.H_p, eps_p).reshape(m, 2 * n) + eps_z
        return gauss_newton_step(sys.with_residuals(r.T)).T

    steps = np.concatenate(ordered_map(run_chunk, range(n_chunks), threads))
    se = steps.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else np.zeros(6)
    return PoseErrorMC(steps.mean(axis=0), se, n_trials)
