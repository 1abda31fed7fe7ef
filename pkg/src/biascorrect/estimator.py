"""Front-end pose solver: Gauss-Newton on stacked reprojection residuals."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import Diverged, EmptySystem, RankDeficient, UnknownPointId
from .geometry import (
    DEPTH_EPSILON,
    FrameObservations,
    Pose,
    camera_coordinates,
    jacobian_point,
    jacobian_pose,
    retract,
)

log = logging.getLogger(__name__)


def pseudo_inverse(M) -> np.ndarray:
    """Moore-Penrose pseudo-inverse through the SVD.

    Singular values below ``max(r, c) * eps * sigma_max`` are treated as zero.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    s_inv = np.zeros_like(s)
    keep = s > tol
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def numerical_rank(M) -> int:
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > max(np.shape(M)) * np.finfo(float).eps * s[0]))


@dataclass(frozen=True, eq=False)
class ResidualSystem:
    """Residuals ``h(x, p_i) - z_i`` and Jacobians at one linearization point.

    ``residuals`` and ``H_x`` are stacked (u, v) per point in ``point_ids`` order;
    ``H_p`` holds one 2x3 block per point.
    """

    residuals: np.ndarray
    H_x: np.ndarray
    H_p: np.ndarray
    point_ids: tuple
    dropped_ids: tuple = ()

    @property
    def n(self) -> int:
        return len(self.point_ids)

    @property
    def cost(self) -> float:
        return 0.5 * float(self.residuals @ self.residuals)

    def with_residuals(self, residuals) -> "ResidualSystem":
        return ResidualSystem(np.asarray(residuals, dtype=float), self.H_x, self.H_p, self.point_ids, self.dropped_ids)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    step_tolerance: float = 1e-10
    levenberg: bool = False
    lambda_init: float = 1e-4
    diverge_patience: int = 3


@dataclass(frozen=True, eq=False)
class SolveReport:
    pose: Pose
    iterations: int
    final_cost: float
    converged: bool
    condition_number: float


def stack_residuals(pose: Pose, landmarks: Mapping, observations: FrameObservations) -> ResidualSystem:
    """Evaluate residuals and Jacobians for every observation of one frame.

    ``landmarks`` maps point id to a world position. Observations whose point is
    behind the camera are dropped and logged.
    """
    ids = observations.point_ids
    if len(ids) == 0:
        raise EmptySystem("no observations")
    try:
        P = np.array([landmarks[int(i)] for i in ids], dtype=float).reshape(-1, 3)
    except KeyError as exc:
        raise UnknownPointId(f"observation references unknown point {exc.args[0]}") from None
    Xc = camera_coordinates(pose, P)
    ok = Xc[:, 2] > DEPTH_EPSILON
    if not np.all(ok):
        dropped = tuple(int(i) for i in ids[~ok])
        log.info("frame %s: dropped observations behind camera for points %s", observations.frame_id, dropped)
    else:
        dropped = ()
    if not np.any(ok):
        raise EmptySystem("all observations are behind the camera")
    P, Xc, uv = P[ok], Xc[ok], observations.uv[ok]
    pred = Xc[:, :2] / Xc[:, 2:3]
    Hx = jacobian_pose(pose, P)
    Hp = jacobian_point(pose, P)
    return ResidualSystem(
        residuals=(pred - uv).reshape(-1),
        H_x=Hx.reshape(-1, 6),
        H_p=Hp,
        point_ids=tuple(int(i) for i in ids[ok]),
        dropped_ids=dropped,
    )


def gauss_newton_step(sys: ResidualSystem) -> np.ndarray:
    """Undamped update ``-pinv(H_x) @ residuals``; apply with :func:`retract`."""
    H = sys.H_x
    if H.shape[0] < 6 or numerical_rank(H) < 6:
        raise RankDeficient(f"pose Jacobian {H.shape} has rank < 6")
    return -pseudo_inverse(H) @ sys.residuals


def _damped_step(sys: ResidualSystem, lam: float) -> np.ndarray:
    H = sys.H_x
    if H.shape[0] < 6 or numerical_rank(H) < 6:
        raise RankDeficient(f"pose Jacobian {H.shape} has rank < 6")
    A = H.T @ H
    A = A + lam * np.diag(np.diag(A))
    return -np.linalg.solve(A, H.T @ sys.residuals)


def solve_pose(initial: Pose, landmarks: Mapping, observations: FrameObservations, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Iterate Gauss-Newton (optionally Levenberg-damped) from ``initial``."""
    pose = initial
    sys = stack_residuals(pose, landmarks, observations)
    cost = sys.cost
    lam = config.lambda_init
    increases = 0
    converged = False
    it = 0
    while it < config.max_iterations:
        it += 1
        delta = _damped_step(sys, lam) if config.levenberg else gauss_newton_step(sys)
        candidate = retract(pose, delta)
        new_sys = stack_residuals(candidate, landmarks, observations)
        new_cost = new_sys.cost
        if config.levenberg:
            if new_cost > cost:
                lam *= 10.0
                increases += 1
                if increases >= config.diverge_patience:
                    raise Diverged(f"cost rose {increases} times in a row")
                continue
            lam /= 10.0
        else:
            increases = increases + 1 if new_cost > cost else 0
            if increases >= config.diverge_patience:
                raise Diverged(f"cost rose {increases} times in a row")
        pose, sys, cost = candidate, new_sys, new_cost
        increases = 0 if config.levenberg else increases
        if np.max(np.abs(delta)) < config.step_tolerance:
            converged = True
            break
    return SolveReport(
        pose=pose,
        iterations=it,
        final_cost=cost,
        converged=converged,
        condition_number=float(np.linalg.cond(sys.H_x)),
    )
