"""Two-frame inverse depth from optical flow and the bias of that estimate.

All image quantities are normalized coordinates (focal length 1). For a camera
moving with linear velocity ``V`` and angular velocity ``Omega`` (both in the
camera frame), the flow at ``(x, y)`` is::

    p = (x - x_f) d + r . Omega,    r = (x y, -(1 + x^2), y)
    q = (y - y_f) d + s . Omega,    s = (1 + y^2, -x y, -x)

with ``(x_f, y_f) = (V_x / V_z, V_y / V_z)`` the focus of expansion and
``d = V_z / z`` the scaled inverse depth. With ``Omega`` known, every feature
contributes two equations in its own ``d`` and the least-squares solution is
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateFeature, FoeUndefined, InsufficientParallax, MismatchedPointSets
from .geometry import Pose, camera_coordinates, se3_compose, se3_inverse, so3_log

VZ_EPSILON = 1e-6
MIN_FOE_DISTANCE2 = 1e-8


def compute_foe(V, vz_epsilon=VZ_EPSILON) -> np.ndarray:
    """Focus of expansion ``(V_x/V_z, V_y/V_z)``.

    Raises FoeUndefined when ``|V_z| <= vz_epsilon * |V|`` (including V = 0).
    """
    V = np.asarray(V, dtype=float)
    norm = np.linalg.norm(V)
    if norm == 0.0 or abs(V[2]) <= vz_epsilon * norm:
        raise FoeUndefined(f"translation {V} has no usable forward component")
    return V[:2] / V[2]


@dataclass(frozen=True, eq=False)
class TwoFrameGeometry:
    """Known relative motion between two frames, expressed as rates over ``dt``."""

    V: np.ndarray
    Omega: np.ndarray
    dt: float = 1.0
    foe: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "V", np.array(self.V, dtype=float).reshape(3))
        object.__setattr__(self, "Omega", np.array(self.Omega, dtype=float).reshape(3))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "foe", compute_foe(self.V))

    @classmethod
    def from_poses(cls, prev: Pose, curr: Pose, dt: float, derotate: bool = False) -> "TwoFrameGeometry":
        """Motion rates that carry ``prev`` onto ``curr``.

        With ``derotate`` the translation is expressed in a frame aligned with
        ``curr`` and ``Omega`` is zero; the caller must then rotate the
        ``prev`` bearings with :func:`derotate_bearings`.
        """
        rel = se3_compose(se3_inverse(prev), curr)
        if derotate:
            return cls(rel.rotation.T @ rel.translation / dt, np.zeros(3), dt)
        return cls(rel.translation / dt, so3_log(rel.rotation) / dt, dt)


def derotate_bearings(prev: Pose, curr: Pose, uv) -> np.ndarray:
    """Re-express normalized points of ``prev`` in a frame rotated like ``curr``."""
    R_rel = prev.rotation.T @ curr.rotation
    uv = np.asarray(uv, dtype=float)
    rays = np.concatenate([uv, np.ones(uv.shape[:-1] + (1,))], axis=-1) @ R_rel
    return rays[..., :2] / rays[..., 2:3]


def _rs(uv):
    x, y = uv[..., 0], uv[..., 1]
    r = np.stack([x * y, -(1.0 + x * x), y], axis=-1)
    s = np.stack([1.0 + y * y, -x * y, -x], axis=-1)
    return r, s


def predict_flow(geom: TwoFrameGeometry, uv, d) -> np.ndarray:
    """Instantaneous flow ``(p, q)`` at normalized points ``uv`` with scaled inverse depth ``d``."""
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(d, dtype=float)
    r, s = _rs(uv)
    a = uv - geom.foe
    p = a[..., 0] * d + r @ geom.Omega
    q = a[..., 1] * d + s @ geom.Omega
    return np.stack([p, q], axis=-1)


@dataclass(frozen=True, eq=False)
class FlowSystem:
    """The stacked linear system ``b = A d`` for N features of one frame pair.

    ``A`` is block diagonal with one column ``(x_i - x_f, y_i - y_f)`` per
    feature; only those blocks are stored (``a_blocks``).
    """

    uv: np.ndarray
    a_blocks: np.ndarray
    b: np.ndarray
    M_diag: np.ndarray
    v_rhs: np.ndarray
    r_vecs: np.ndarray
    s_vecs: np.ndarray
    flow_u: np.ndarray

    @property
    def n(self) -> int:
        return self.uv.shape[0]

    @property
    def A(self) -> np.ndarray:
        n = self.n
        A = np.zeros((2 * n, n))
        idx = np.arange(n)
        A[2 * idx, idx] = self.a_blocks[:, 0]
        A[2 * idx + 1, idx] = self.a_blocks[:, 1]
        return A


def degenerate_features(geom: TwoFrameGeometry, uv) -> np.ndarray:
    """Boolean mask of features (numerically) on the focus of expansion."""
    a = np.asarray(uv, dtype=float) - geom.foe
    return np.einsum("...i,...i->...", a, a) < MIN_FOE_DISTANCE2


def build_flow_system(geom: TwoFrameGeometry, uv_prev, uv_curr) -> FlowSystem:
    """Flow from matched points, ``u = (uv_curr - uv_prev) / dt``, minus the rotational part.

    Raises DegenerateFeature (listing the offending rows) if any feature lies on the FOE.
    """
    uv = np.asarray(uv_prev, dtype=float).reshape(-1, 2)
    uv_c = np.asarray(uv_curr, dtype=float).reshape(-1, 2)
    if uv.shape != uv_c.shape or uv.shape[0] == 0:
        raise ValueError("need N >= 1 matched point pairs of equal length")
    a = uv - geom.foe
    m = np.einsum("ij,ij->i", a, a)
    bad = np.flatnonzero(m < MIN_FOE_DISTANCE2)
    if bad.size:
        raise DegenerateFeature(bad)
    flow = (uv_c - uv) / geom.dt
    r, s = _rs(uv)
    b = np.stack([flow[:, 0] - r @ geom.Omega, flow[:, 1] - s @ geom.Omega], axis=1)
    v = np.einsum("ij,ij->i", a, b)
    return FlowSystem(
        uv=uv,
        a_blocks=a,
        b=b.reshape(-1),
        M_diag=m,
        v_rhs=v,
        r_vecs=r,
        s_vecs=s,
        flow_u=flow.reshape(-1),
    )


def solve_inverse_depth(sys: FlowSystem) -> np.ndarray:
    """Least-squares ``d`` per feature; the normal equations are diagonal, ``d_i = v_i / m_ii``."""
    return sys.v_rhs / sys.M_diag


def bias_closed_form(sys: FlowSystem, geom: TwoFrameGeometry, sigma2) -> np.ndarray:
    """Closed-form bias of :func:`solve_inverse_depth` for coordinate noise variance ``sigma2``.

    Uses the analytic derivatives of the rotational flow rows::

        dr/dx = (y, -2x, 0)    dr/dy = (x, 0, 1)
        ds/dx = (0, -y, -1)    ds/dy = (2y, -x, 0)
    """
    x, y = sys.uv[:, 0], sys.uv[:, 1]
    ax, ay = sys.a_blocks[:, 0], sys.a_blocks[:, 1]
    m2 = sys.M_diag**2
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), x.shape)
    zero, one = np.zeros_like(x), np.ones_like(x)
    Om = geom.Omega
    r_x = np.stack([y, -2.0 * x, zero], axis=1) @ Om
    r_y = np.stack([x, zero, one], axis=1) @ Om
    s_x = np.stack([zero, -y, -one], axis=1) @ Om
    s_y = np.stack([2.0 * y, -x, zero], axis=1) @ Om
    wx, wy = Om[0], Om[1]

    t1 = 2.0 * s2 * sys.v_rhs / m2
    t2 = 2.0 * s2 / m2 * (ax**2 * r_x + ay**2 * s_y)
    t3 = 2.0 * s2 / m2 * (ax * ay * (r_y + s_x))
    t4 = s2 / m2 * (ax * wy - ay * wx - (r_x + s_y))
    return t1 + t2 + t3 + t4


@dataclass(frozen=True, eq=False)
class DepthEstimate:
    """Per-point inverse depth and its predicted bias, on one common scale."""

    point_ids: tuple
    d_hat: np.ndarray
    bias_mu: np.ndarray
    L_used: int = 1

    def __post_init__(self):
        object.__setattr__(self, "point_ids", tuple(int(i) for i in self.point_ids))
        object.__setattr__(self, "d_hat", np.array(self.d_hat, dtype=float).reshape(-1))
        object.__setattr__(self, "bias_mu", np.array(self.bias_mu, dtype=float).reshape(-1))
        if not (len(self.point_ids) == self.d_hat.size == self.bias_mu.size):
            raise ValueError("point_ids, d_hat and bias_mu must have equal length")


def aggregate_pairs(results: Sequence[DepthEstimate]) -> DepthEstimate:
    """Average L two-frame estimates (and their biases) of the same points."""
    results = list(results)
    if not results:
        raise ValueError("need at least one estimate")
    ids = results[0].point_ids
    for r in results[1:]:
        if r.point_ids != ids:
            raise MismatchedPointSets("all estimates must cover the same points in the same order")
    if len(results) == 1:
        return results[0]
    d = np.mean([r.d_hat for r in results], axis=0)
    mu = np.mean([r.bias_mu for r in results], axis=0)
    return DepthEstimate(ids, d, mu, sum(r.L_used for r in results))


def debias(est: DepthEstimate) -> np.ndarray:
    """Bias-compensated inverse depth ``d_hat - mu``."""
    return est.d_hat - est.bias_mu


def map_point_bias(d_tilde, d_c) -> np.ndarray:
    """Bias of the map's inverse depth relative to the unbiased two-frame value."""
    d_tilde = np.asarray(d_tilde, dtype=float)
    d_c = np.asarray(d_c, dtype=float)
    if d_tilde.shape != d_c.shape:
        raise MismatchedPointSets(f"shapes {d_tilde.shape} and {d_c.shape} differ")
    return d_tilde - d_c


@dataclass(frozen=True, eq=False)
class MapPoint:
    """A triangulated landmark and its inverse-depth bias in the anchor frame.

    ``inv_depth_tilde`` uses the same scale as the depth estimates it is
    compared with (``v_z / z``; the pipeline uses ``v_z = 1``, i.e. 1/z).
    """

    id: int
    position: np.ndarray
    anchor_frame: int
    inv_depth_tilde: float
    bias_inv_depth: float = 0.0
    bias_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    observations: tuple = ()

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        pos.flags.writeable = False
        bp = np.array(self.bias_point, dtype=float).reshape(3)
        bp.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "bias_point", bp)
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.inv_depth_tilde > 0:
            raise ValueError(f"point {self.id}: inverse depth must be positive")


def inv_depth_bias_to_point_bias(mp: MapPoint, anchor_pose: Pose, v_z: float = 1.0) -> np.ndarray:
    """World-frame displacement of the map point implied by its inverse-depth bias.

    The point moves along its anchor-frame viewing ray; to first order the
    depth changes by ``-(v_z / d_tilde^2) * mu``.
    """
    return point_bias_along_rays(mp.position[None], [mp.inv_depth_tilde], [mp.bias_inv_depth], anchor_pose, v_z)[0]


def point_bias_along_rays(positions, inv_depth_tilde, mu, anchor_pose: Pose, v_z: float = 1.0) -> np.ndarray:
    """Batched :func:`inv_depth_bias_to_point_bias` for ``(N, 3)`` positions anchored in one frame."""
    d = np.asarray(inv_depth_tilde, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if not np.all(d > 0):
        raise ValueError("inverse depth must be positive")
    if abs(v_z) <= VZ_EPSILON:
        raise FoeUndefined("scale v_z is zero")
    Xa = camera_coordinates(anchor_pose, np.asarray(positions, dtype=float).reshape(-1, 3))
    rays = Xa / Xa[:, 2:3]
    dz = -(v_z / d**2) * mu
    return (rays * dz[:, None]) @ anchor_pose.rotation.T


def triangulate_multiview(poses: Sequence[Pose], uvs, v_z: float = 1.0, min_baseline: float = 1e-4):
    """Linear (DLT) triangulation from k >= 2 views in normalized coordinates.

    Returns the world point and its scaled inverse depth ``v_z / z`` in the
    first (anchor) view.
    """
    uvs = np.asarray(uvs, dtype=float).reshape(-1, 2)
    if len(poses) < 2 or len(poses) != uvs.shape[0]:
        raise ValueError("need one observation per pose and at least two views")
    centers = np.array([p.translation for p in poses])
    baseline = np.max(np.linalg.norm(centers[:, None] - centers[None], axis=-1))
    if baseline <= min_baseline:
        raise InsufficientParallax(f"baseline {baseline:.3g} m is below {min_baseline} m")
    rows = []
    for pose, (x, y) in zip(poses, uvs):
        P = np.hstack([pose.rotation.T, -pose.rotation.T @ pose.translation[:, None]])
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    _, _, Vt = np.linalg.svd(np.array(rows))
    X = Vt[-1]
    point = X[:3] / X[3]
    z = camera_coordinates(poses[0], point)[2]
    return point, v_z / z
