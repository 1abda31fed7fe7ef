"""Rigid poses, the pinhole projection and its analytic Jacobians.

Conventions used everywhere in the package:

* ``Pose(R, t)`` maps camera coordinates to world coordinates, so ``t`` is the
  camera centre and a world point ``p`` has camera coordinates
  ``X_c = R.T @ (p - t)``.
* Projections are returned in normalized image coordinates ``(X_c/Z_c, Y_c/Z_c)``;
  the focal length and principal point only matter when converting to pixels.
* Tangent vectors are ordered rotation first, ``xi = [omega, v]``, and a pose is
  updated on the left: ``pose (+) xi = se3_exp(xi) * pose``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera

DEPTH_EPSILON = 1e-6
_SMALL_ANGLE = 1e-7


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(omega) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(omega, dtype=float)).as_matrix()


def so3_log(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform with an optional timestamp (seconds)."""

    rotation: np.ndarray
    translation: np.ndarray
    timestamp: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        if self.timestamp is not None:
            ts = float(self.timestamp)
            if not np.isfinite(ts):
                raise ValueError("timestamp must be finite")
            object.__setattr__(self, "timestamp", ts)

    @classmethod
    def identity(cls, timestamp=None) -> "Pose":
        return cls(np.eye(3), np.zeros(3), timestamp)

    @classmethod
    def from_matrix(cls, T, timestamp=None) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3], timestamp)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def with_timestamp(self, timestamp) -> "Pose":
        return Pose(self.rotation, self.translation, timestamp)

    def orthonormality_error(self) -> float:
        R = self.rotation
        return float(np.linalg.norm(R.T @ R - np.eye(3)))

    def is_valid(self, tol=1e-9) -> bool:
        return self.orthonormality_error() < tol and np.linalg.det(self.rotation) > 0

    def inverse(self) -> "Pose":
        return se3_inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return se3_compose(self, other)


def se3_apply(pose: Pose, points) -> np.ndarray:
    """Map points (3,) or (N, 3) from the pose's local frame to its parent frame."""
    p = np.asarray(points, dtype=float)
    return p @ pose.rotation.T + pose.translation


def se3_compose(a: Pose, b: Pose) -> Pose:
    """``a * b``; the result carries ``b``'s timestamp."""
    R = a.rotation @ b.rotation
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
        R = orthonormalize(R)
    t = a.rotation @ b.translation + a.translation
    return Pose(R, t, b.timestamp)


def se3_inverse(pose: Pose) -> Pose:
    Rt = pose.rotation.T
    return Pose(Rt, -Rt @ pose.translation, pose.timestamp)


def _left_jacobian(omega) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * (W @ W)


def _left_jacobian_inv(omega) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    # cot(theta/2) form stays finite up to theta = pi
    c = 1.0 / theta**2 - 1.0 / (2.0 * theta * np.tan(0.5 * theta))
    return np.eye(3) - 0.5 * W + c * (W @ W)


def se3_exp(xi) -> Pose:
    """Exponential map of a tangent vector ``[omega, v]``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (6,):
        raise ValueError("tangent vector must have shape (6,)")
    omega, v = xi[:3], xi[3:]
    return Pose(so3_exp(omega), _left_jacobian(omega) @ v)


def se3_log(pose: Pose) -> np.ndarray:
    """Inverse of :func:`se3_exp` for rotation angles in [0, pi]."""
    omega = so3_log(pose.rotation)
    v = _left_jacobian_inv(omega) @ pose.translation
    return np.concatenate([omega, v])


def retract(pose: Pose, delta) -> Pose:
    """Left update ``se3_exp(delta) * pose`` keeping the pose's timestamp."""
    return se3_compose(se3_exp(delta), pose)


def pose_error(estimate: Pose, reference: Pose) -> np.ndarray:
    """Tangent vector ``xi`` with ``estimate = se3_exp(xi) * reference``."""
    return se3_log(se3_compose(estimate, se3_inverse(reference)))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels (square pixels, no distortion)."""

    focal_length: float = 500.0
    principal_point: tuple = (320.0, 240.0)
    image_size: tuple = (640, 480)

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ValueError("focal length must be positive")
        cx, cy = self.principal_point
        w, h = self.image_size
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ValueError("principal point must lie inside the image")

    def to_pixels(self, uv) -> np.ndarray:
        return np.asarray(uv, dtype=float) * self.focal_length + np.asarray(self.principal_point)

    def to_normalized(self, px) -> np.ndarray:
        return (np.asarray(px, dtype=float) - np.asarray(self.principal_point)) / self.focal_length

    def contains(self, uv) -> np.ndarray:
        px = self.to_pixels(uv)
        w, h = self.image_size
        return (px[..., 0] >= 0) & (px[..., 0] <= w) & (px[..., 1] >= 0) & (px[..., 1] <= h)

    def normalized_variance(self, pixel_sigma) -> float:
        return (float(pixel_sigma) / self.focal_length) ** 2


@dataclass(frozen=True)
class Observation:
    point_id: int
    uv: np.ndarray
    sigma2: float
    frame_id: int

    def __post_init__(self):
        object.__setattr__(self, "uv", _frozen(self.uv, (2,)))
        if not np.all(np.isfinite(self.uv)):
            raise ValueError("uv must be finite")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")


@dataclass(frozen=True, eq=False)
class FrameObservations:
    """All observations of one frame, stored column-wise."""

    frame_id: int
    point_ids: np.ndarray
    uv: np.ndarray
    sigma2: np.ndarray
    timestamp: Optional[float] = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.array(self.point_ids, dtype=np.int64).reshape(-1)
        ids.flags.writeable = False
        n = ids.shape[0]
        uv = _frozen(np.reshape(self.uv, (n, 2)))
        s2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (n,)).copy()
        s2.flags.writeable = False
        if np.any(s2 < 0):
            raise ValueError("sigma2 must be non-negative")
        object.__setattr__(self, "point_ids", ids)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "sigma2", s2)
        object.__setattr__(self, "_index", {int(p): i for i, p in enumerate(ids)})

    @classmethod
    def from_observations(cls, frame_id, observations) -> "FrameObservations":
        obs = list(observations)
        return cls(
            frame_id,
            [o.point_id for o in obs],
            np.array([o.uv for o in obs]).reshape(-1, 2),
            [o.sigma2 for o in obs],
        )

    def __len__(self) -> int:
        return self.point_ids.shape[0]

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> Observation:
        return Observation(int(self.point_ids[i]), self.uv[i], float(self.sigma2[i]), self.frame_id)

    def __contains__(self, point_id) -> bool:
        return int(point_id) in self._index

    def rows(self, point_ids) -> np.ndarray:
        """Row indices of the given point ids (all must be present)."""
        return np.array([self._index[int(p)] for p in point_ids], dtype=np.int64)

    def subset(self, point_ids) -> "FrameObservations":
        r = self.rows(point_ids)
        return FrameObservations(self.frame_id, self.point_ids[r], self.uv[r], self.sigma2[r], self.timestamp)


def camera_coordinates(pose: Pose, points) -> np.ndarray:
    return (np.asarray(points, dtype=float) - pose.translation) @ pose.rotation


def _check_depth(Xc):
    if np.any(Xc[..., 2] <= DEPTH_EPSILON):
        raise BehindCamera("point depth below %g m in the camera frame" % DEPTH_EPSILON)


def project(pose: Pose, points) -> np.ndarray:
    """Normalized image coordinates of world points, (2,) or (N, 2).

    Raises BehindCamera if any point has depth <= DEPTH_EPSILON.
    """
    Xc = camera_coordinates(pose, points)
    _check_depth(Xc)
    return Xc[..., :2] / Xc[..., 2:3]


def _projection_jacobian(Xc) -> np.ndarray:
    X, Y, Z = Xc[..., 0], Xc[..., 1], Xc[..., 2]
    inv_z = 1.0 / Z
    J = np.zeros(Xc.shape[:-1] + (2, 3))
    J[..., 0, 0] = inv_z
    J[..., 1, 1] = inv_z
    J[..., 0, 2] = -X * inv_z**2
    J[..., 1, 2] = -Y * inv_z**2
    return J


def jacobian_point(pose: Pose, points) -> np.ndarray:
    """d project / d p (world coordinates); (2, 3) or (N, 2, 3)."""
    Xc = camera_coordinates(pose, points)
    _check_depth(Xc)
    return _projection_jacobian(Xc) @ pose.rotation.T


def jacobian_pose(pose: Pose, points) -> np.ndarray:
    """d project / d xi for the left update ``se3_exp(xi) * pose``; (2, 6) or (N, 2, 6).

    Columns are ordered ``[omega, v]``.
    """
    p = np.asarray(points, dtype=float)
    Xc = camera_coordinates(pose, p)
    _check_depth(Xc)
    Jp = _projection_jacobian(Xc) @ pose.rotation.T
    # dX_c/domega = R^T [p]x  and  dX_c/dv = -R^T
    px = np.zeros(p.shape[:-1] + (3, 3))
    px[..., 0, 1], px[..., 0, 2] = -p[..., 2], p[..., 1]
    px[..., 1, 0], px[..., 1, 2] = p[..., 2], -p[..., 0]
    px[..., 2, 0], px[..., 2, 1] = -p[..., 1], p[..., 0]
    return np.concatenate([Jp @ px, -Jp], axis=-1)
