"""Named Monte Carlo / dense-matrix validation suites.

Each fixture is a small, fully seeded problem with an independent oracle.
``run_fixture(name)`` returns a :class:`ValidationReport`; ``FIXTURES`` lists
the available names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bias import TwoFrameGeometry, bias_closed_form, build_flow_system, predict_flow
from .correction import BiasBundle, expected_pose_error
from .estimator import ResidualSystem, gauss_newton_step, stack_residuals
from .geometry import FrameObservations, Pose, project, se3_exp
from .sim import monte_carlo_depth_bias, monte_carlo_pose_error, seeded_rng

# closed-form / Monte Carlo agreement: |mu - empirical| <= max(3 SE, 15 % |mu|)
EQ12_SE_FACTOR = 3.0
EQ12_REL_TOL = 0.15
POSE_SE_FACTOR = 3.0


@dataclass
class ValidationReport:
    name: str
    passed: bool
    lines: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def render(self) -> str:
        head = f"{self.name}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + [f"  {line}" for line in self.lines])


# ---------------------------------------------------------------------------
# fixtures


@dataclass(frozen=True, eq=False)
class DepthFixture:
    geom: TwoFrameGeometry
    uv: np.ndarray
    depth: np.ndarray
    sigma2: float

    @property
    def d_true(self) -> np.ndarray:
        return self.geom.V[2] / self.depth

    @property
    def uv_curr(self) -> np.ndarray:
        return self.uv + predict_flow(self.geom, self.uv, self.d_true) * self.geom.dt


def eq12_fixture(seed: int = 0) -> DepthFixture:
    """20 points uniform in [-0.5, 0.5]^2 at depths U[2, 8] m, V = (0.1, 0, 1), known rotation, sigma = 0.005."""
    rng = seeded_rng(seed, 101)
    uv = rng.uniform(-0.5, 0.5, size=(20, 2))
    depth = rng.uniform(2.0, 8.0, size=20)
    geom = TwoFrameGeometry([0.1, 0.0, 1.0], [0.02, -0.01, 0.005], dt=1.0)
    return DepthFixture(geom, uv, depth, 0.005**2)


@dataclass(frozen=True, eq=False)
class PoseFixture:
    pose: Pose
    system: ResidualSystem
    bias_mean: np.ndarray
    bias_cov: np.ndarray
    noise_sigma2: float


def pose_fixture(seed: int, n_points: int) -> PoseFixture:
    """Residual system of a random camera viewing ``n_points`` points, linearized at the true pose."""
    rng = seeded_rng(seed, 102)
    pose = se3_exp(np.concatenate([rng.normal(0, 0.2, 3), rng.normal(0, 1.0, 3)]))
    Xc = np.column_stack([rng.uniform(-1.5, 1.5, (n_points, 2)), np.ones(n_points)]) * rng.uniform(2, 8, (n_points, 1))
    points = Xc @ pose.rotation.T + pose.translation
    obs = FrameObservations(0, np.arange(n_points), project(pose, points), 0.0)
    sys = stack_residuals(pose, dict(enumerate(points)), obs)
    mean = rng.normal(0.0, 0.05, size=(n_points, 3))
    A = rng.normal(0.0, 0.02, size=(3, 3))
    return PoseFixture(pose, sys, mean, A @ A.T, (0.5 / 500.0) ** 2)


POSE_FIXTURES = ((0, 8), (1, 40), (2, 150))


# ---------------------------------------------------------------------------
# suites


def dense_pose_error(sys: ResidualSystem, eps_p, eps_z) -> np.ndarray:
    """``-pinv(H_x) (H_p eps_p + eps_z)`` with a dense block-diagonal ``H_p`` and NumPy's pinv."""
    n = sys.n
    Hp = np.zeros((2 * n, 3 * n))
    for i in range(n):
        Hp[2 * i : 2 * i + 2, 3 * i : 3 * i + 3] = sys.H_p[i]
    return -np.linalg.pinv(sys.H_x) @ (Hp @ np.asarray(eps_p).reshape(-1) + np.asarray(eps_z))


def validate_eq5_identity(seed: int = 0) -> ValidationReport:
    """One Gauss-Newton step on a linear system equals the dense error-propagation formula."""
    report = ValidationReport("eq5-identity", True)
    for s, n in POSE_FIXTURES:
        fx = pose_fixture(seed + s, n)
        rng = seeded_rng(seed + s, 103)
        eps_p = rng.normal(0, 0.05, (n, 3))
        eps_z = rng.normal(0, 1e-3, 2 * n)
        r = np.einsum("nij,nj->ni", fx.system.H_p, eps_p).reshape(-1) + eps_z
        step = gauss_newton_step(fx.system.with_residuals(r))
        oracle = dense_pose_error(fx.system, eps_p, eps_z)
        err = float(np.max(np.abs(step - oracle)))
        ok = err <= 1e-10
        report.passed &= ok
        report.lines.append(f"n={n:4d}: max |step - dense| = {err:.2e} (tol 1e-10) {'ok' if ok else 'FAIL'}")
    return report


def validate_eq6_linear(seed: int = 0) -> ValidationReport:
    """Linearity of the expected pose error and agreement with the dense product."""
    report = ValidationReport("eq6-linear", True)
    for s, n in POSE_FIXTURES:
        fx = pose_fixture(seed + s, n)
        ids = np.array(fx.system.point_ids)
        rng = seeded_rng(seed + s, 104)
        mu1, mu2 = fx.bias_mean, rng.normal(0, 0.05, (n, 3))
        b1 = BiasBundle(ids, mu1, np.zeros(n), True)
        b2 = BiasBundle(ids, mu2, np.zeros(n), True)
        b12 = BiasBundle(ids, mu1 + mu2, np.zeros(n), True)
        e1, e2, e12 = (expected_pose_error(fx.system, b) for b in (b1, b2, b12))
        scale = max(1.0, float(np.max(np.abs(e1))))
        checks = {
            "dense": float(np.max(np.abs(e1 - dense_pose_error(fx.system, mu1, np.zeros(2 * n))))) / scale,
            "additive": float(np.max(np.abs(e12 - e1 - e2))) / scale,
            "homogeneous": float(np.max(np.abs(expected_pose_error(fx.system, b1.scaled(2.5)) - 2.5 * e1))) / scale,
            "zero": float(np.max(np.abs(expected_pose_error(fx.system, b1.scaled(0.0))))),
        }
        ok = all(v <= 1e-12 for v in checks.values())
        report.passed &= ok
        body = ", ".join(f"{k} {v:.1e}" for k, v in checks.items())
        report.lines.append(f"n={n:4d}: {body} (tol 1e-12) {'ok' if ok else 'FAIL'}")
    return report


def validate_eq6_montecarlo(seed: int = 0, n_trials: int = 10_000) -> ValidationReport:
    """Mean one-step pose error under random map and image errors versus the closed form."""
    report = ValidationReport("eq6-montecarlo", True)
    for s, n in POSE_FIXTURES:
        fx = pose_fixture(seed + s, n)
        bundle = BiasBundle(np.array(fx.system.point_ids), fx.bias_mean, np.zeros(n), True)
        expected = expected_pose_error(fx.system, bundle)
        mc = monte_carlo_pose_error(fx.system, fx.bias_mean, fx.bias_cov, fx.noise_sigma2, n_trials, seed + s)
        z = np.abs(mc.mean - expected) / mc.se
        ok = bool(np.all(z <= POSE_SE_FACTOR))
        report.passed &= ok
        report.details[n] = (expected, mc)
        report.lines.append(f"n={n:4d}: max |mean - closed form| / SE = {z.max():.2f} (tol {POSE_SE_FACTOR}) {'ok' if ok else 'FAIL'}")
    return report


def eq12_comparison(seed: int = 0, n_trials: int = 100_000, fixture: Optional[DepthFixture] = None):
    """Closed-form bias at the noise-free system and the Monte Carlo statistics of the same fixture."""
    fx = fixture or eq12_fixture(seed)
    sys = build_flow_system(fx.geom, fx.uv, fx.uv_curr)
    mu = bias_closed_form(sys, fx.geom, fx.sigma2)
    mc = monte_carlo_depth_bias(fx.geom, fx.uv, fx.d_true, fx.sigma2, n_trials, seed)
    return fx, mu, mc


def eq12_point_checks(mu, mc):
    tol = np.maximum(EQ12_SE_FACTOR * mc.se, EQ12_REL_TOL * np.abs(mu))
    return np.abs(mu - mc.bias) <= tol, tol


def validate_eq12(seed: int = 0, n_trials: int = 100_000) -> ValidationReport:
    """Closed-form inverse-depth bias versus the empirical bias, point by point."""
    fx, mu, mc = eq12_comparison(seed, n_trials)
    ok, tol = eq12_point_checks(mu, mc)
    report = ValidationReport("eq12-default", bool(ok.all()), details={"mu": mu, "mc": mc, "fixture": fx})
    m = np.sum((fx.uv - fx.geom.foe) ** 2, axis=1)
    for i in range(len(mu)):
        report.lines.append(
            f"point {i:2d} |a|^2={m[i]:.3f}: closed form {mu[i]:+.3e}  empirical {mc.bias[i]:+.3e} "
            f"+- {mc.se[i]:.1e}  tol {tol[i]:.1e} {'ok' if ok[i] else 'FAIL'}"
        )
    report.lines.append(f"{int(ok.sum())}/{len(mu)} points within tolerance")
    return report


def validate_debiased(seed: int = 0, n_trials: int = 100_000) -> ValidationReport:
    """Mean of the bias-compensated inverse depth versus the true value."""
    fx, _, mc = eq12_comparison(seed, n_trials)
    z = np.abs(mc.mean_d_c - fx.d_true) / mc.se_d_c
    ok = z <= 3.0
    report = ValidationReport("eq12-unbiased", bool(ok.all()), details={"z": z, "mc": mc})
    for i in range(len(z)):
        report.lines.append(f"point {i:2d}: |mean d_c - d| / SE = {z[i]:.2f} {'ok' if ok[i] else 'FAIL'}")
    report.lines.append(f"{int(ok.sum())}/{len(z)} points within 3 SE")
    return report


FIXTURES: dict[str, Callable[..., ValidationReport]] = {
    "eq5-identity": validate_eq5_identity,
    "eq6-linear": validate_eq6_linear,
    "eq6-montecarlo": validate_eq6_montecarlo,
    "eq12-default": validate_eq12,
    "eq12-unbiased": validate_debiased,
}


def run_fixture(name: str, seed: int = 0) -> ValidationReport:
    try:
        fn = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}") from None
    return fn(seed)
