import numpy as np
import pytest
from scipy import stats

from biascorrect.bias import TwoFrameGeometry
from biascorrect.errors import InfeasibleConfig, UnknownPointId
from biascorrect.correction import BiasBundle, expected_pose_error
from biascorrect.geometry import Pose, camera_coordinates, project, so3_exp, so3_log
from biascorrect.sim import (
    ARC_RADIUS,
    SceneConfig,
    covariance_sqrt,
    generate_scene,
    inject_inverse_depth_bias,
    inject_point_bias,
    monte_carlo_depth_bias,
    monte_carlo_pose_error,
    observe,
    ordered_map,
    thread_count,
    trajectory_state,
    visibility,
)
from biascorrect.validation import pose_fixture


def small(kind="line", **kw):
    return SceneConfig(**{"n_points": 200, "n_frames": 20, "trajectory_kind": kind, **kw})


# --- scenes -----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["line", "arc", "figure-eight"])
def test_scene_is_deterministic_and_visible(kind):
    a, b = generate_scene(small(kind, seed=4)), generate_scene(small(kind, seed=4))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, generate_scene(small(kind, seed=5)).points)
    assert np.all(visibility(a.poses, a.points, a.config.camera).sum(axis=0) >= 2)
    assert np.all(np.diff(a.timestamps) > 0)


def test_single_point_two_frame_line():
    gt = generate_scene(SceneConfig(n_points=1, n_frames=2, trajectory_kind="line"))
    assert gt.points.shape == (1, 3)
    assert visibility(gt.poses, gt.points, gt.config.camera).all()


def test_infeasible_config_raises():
    # every point behind both cameras
    cfg = SceneConfig(n_points=5, n_frames=2, trajectory_kind="line", point_box=((-1, -1, -10), (1, 1, -5)))
    with pytest.raises(InfeasibleConfig):
        generate_scene(cfg)


def _finite_difference_omega(kind, t, h=1e-6):
    R0 = trajectory_state(kind, t - h)[0].rotation
    R1 = trajectory_state(kind, t + h)[0].rotation
    return so3_log(R0.T @ R1) / (2 * h)


@pytest.mark.parametrize("kind", ["line", "arc", "figure-eight"])
@pytest.mark.parametrize("t", [0.0, 1.3, 4.7, 7.9])
def test_angular_rate_matches_pose_derivative(kind, t):
    omega = trajectory_state(kind, t)[1]
    np.testing.assert_allclose(_finite_difference_omega(kind, t), omega, atol=1e-6)


def test_arc_rate_is_analytic():
    for t in (0.0, 2.0, 9.0):
        np.testing.assert_allclose(trajectory_state("arc", t, speed=1.5)[1], [0, 1.5 / ARC_RADIUS, 0])


def test_figure_eight_covers_all_gate_regimes():
    gt = generate_scene(SceneConfig(n_points=50, n_frames=200))
    rates = np.linalg.norm(gt.omega, axis=1)
    assert rates.max() > 0.5 and rates.min() < 0.3
    assert np.any((rates >= 0.3) & (rates < 0.5))


def test_camera_looks_along_travel_direction():
    # with the default heading the focus of expansion is tan(heading) from the image centre
    for kind in ("line", "arc"):
        p0, p1 = (trajectory_state(kind, t, heading=0.3)[0] for t in (0.0, 1e-4))
        v_cam = p0.rotation.T @ (p1.translation - p0.translation)
        assert v_cam[2] > 0
        np.testing.assert_allclose(abs(v_cam[0] / v_cam[2]), np.tan(0.3), rtol=1e-3)


# --- observations --------------------------------------------------------------------


def test_zero_noise_observations_are_exact_projections():
    gt = generate_scene(small("figure-eight", pixel_sigma=0.0))
    for frame, pose in zip(observe(gt), gt.poses):
        np.testing.assert_allclose(frame.uv, project(pose, gt.points[frame.point_ids]), atol=1e-15)
        assert np.all(frame.sigma2 == 0.0)


def test_observation_noise_statistics():
    cfg = SceneConfig(n_points=2000, n_frames=30, trajectory_kind="line", pixel_sigma=0.8)
    gt = generate_scene(cfg)
    sigma = 0.8 / cfg.camera.focal_length
    res = np.concatenate([f.uv - project(p, gt.points[f.point_ids]) for f, p in zip(observe(gt), gt.poses)])
    n = res.shape[0]
    assert n > 10_000
    # per-axis variance within 2 % and the axes uncorrelated
    np.testing.assert_allclose(res.var(axis=0), sigma**2, rtol=0.02)
    assert abs(np.corrcoef(res.T)[0, 1]) < 4 / np.sqrt(n)
    # squared norm follows sigma^2 chi2(2): compare the empirical distribution
    r2 = np.sum(res**2, axis=1) / sigma**2
    assert stats.kstest(r2, stats.chi2(2).cdf).pvalue > 1e-3


def test_observation_seed_reproducibility():
    gt = generate_scene(small())
    a, b, c = observe(gt, seed=1), observe(gt, seed=1), observe(gt, seed=2)
    assert all(np.array_equal(x.uv, y.uv) for x, y in zip(a, b))
    assert not all(np.array_equal(x.uv, y.uv) for x, y in zip(a, c))


# --- bias injection ----------------------------------------------------------------------


def test_inject_point_bias_deterministic_and_unknown_ids():
    pts = {0: np.zeros(3), 1: np.ones(3)}
    out = inject_point_bias(pts, {1: [0.1, 0.0, 0.0]})
    np.testing.assert_array_equal(out.positions[0], np.zeros(3))
    np.testing.assert_allclose(out.positions[1], [1.1, 1, 1])
    np.testing.assert_allclose(out.offsets[1], [0.1, 0, 0])
    assert np.array_equal(pts[1], np.ones(3))
    with pytest.raises(UnknownPointId):
        inject_point_bias(pts, {7: [0, 0, 0]})


def test_inject_point_bias_sampler_mean():
    n = 4000
    pts = {i: np.zeros(3) for i in range(n)}
    mean = np.array([0.05, -0.02, 0.01])
    cov = np.diag([4e-4, 1e-4, 9e-4])
    out = inject_point_bias(pts, {i: mean for i in range(n)}, cov, seed=3)
    offs = np.array([out.offsets[i] for i in range(n)])
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(offs.mean(axis=0) - mean) < 3 * se)
    np.testing.assert_allclose(np.cov(offs.T), cov, atol=1e-4)


def test_inject_inverse_depth_bias_scales_inverse_depth():
    anchor = Pose(so3_exp([0.1, -0.2, 0.05]), np.array([0.3, 0.1, -0.4]))
    rng = np.random.default_rng(0)
    Xc = np.column_stack([rng.uniform(-1, 1, (10, 2)), np.ones(10)]) * rng.uniform(2, 6, (10, 1))
    pts = dict(enumerate(Xc @ anchor.rotation.T + anchor.translation))
    beta = {i: 0.05 * (i % 3 - 1) for i in range(10)}
    out = inject_inverse_depth_bias(pts, anchor, beta)
    for i in range(10):
        zc = camera_coordinates(anchor, out.positions[i])
        assert 1 / zc[2] == pytest.approx((1 + beta[i]) / Xc[i, 2], rel=1e-12)
        np.testing.assert_allclose(zc[:2] / zc[2], Xc[i, :2] / Xc[i, 2], atol=1e-14)


def test_covariance_sqrt_handles_singular():
    C = np.diag([1e-2, 0.0, 4e-2])
    S = covariance_sqrt(C)
    np.testing.assert_allclose(S @ S.T, C, atol=1e-15)


# --- Monte Carlo oracles ----------------------------------------------------------------


@pytest.fixture(scope="module")
def depth_case():
    rng = np.random.default_rng(2)
    uv = rng.uniform(-0.5, 0.5, (8, 2))
    geom = TwoFrameGeometry([0.1, 0.0, 1.0], [0.02, -0.01, 0.005], dt=1.0)
    return geom, uv, 1.0 / rng.uniform(2, 8, 8)


def test_depth_mc_noise_free_is_exact(depth_case):
    geom, uv, d = depth_case
    mc = monte_carlo_depth_bias(geom, uv, d, 0.0, 10, seed=0)
    np.testing.assert_allclose(mc.bias, 0.0, atol=1e-12)
    np.testing.assert_allclose(mc.mean_d_c, d, atol=1e-12)


def test_depth_mc_standard_error_scales(depth_case):
    geom, uv, d = depth_case
    a = monte_carlo_depth_bias(geom, uv, d, 0.005**2, 1000, seed=1)
    b = monte_carlo_depth_bias(geom, uv, d, 0.005**2, 4000, seed=1)
    np.testing.assert_allclose(a.se / b.se, 2.0, rtol=0.2)


def test_depth_mc_is_thread_invariant(depth_case):
    geom, uv, d = depth_case
    a = monte_carlo_depth_bias(geom, uv, d, 0.005**2, 3500, seed=9, threads=1)
    b = monte_carlo_depth_bias(geom, uv, d, 0.005**2, 3500, seed=9, threads=4)
    assert np.array_equal(a.bias, b.bias) and np.array_equal(a.se, b.se)


def test_pose_mc_zero_mean_and_exact_cases():
    fx = pose_fixture(0, 20)
    zero = monte_carlo_pose_error(fx.system, np.zeros((20, 3)), fx.bias_cov, fx.noise_sigma2, 4000, seed=1)
    assert np.all(np.abs(zero.mean) < 4 * zero.se)
    # no randomness: every trial takes the same step
    det = monte_carlo_pose_error(fx.system, fx.bias_mean, None, 0.0, 5, seed=1)
    e = expected_pose_error(fx.system, BiasBundle(np.array(fx.system.point_ids), fx.bias_mean, np.zeros(20), True))
    np.testing.assert_allclose(det.mean, e, atol=1e-13)
    np.testing.assert_allclose(det.se, 0.0, atol=1e-13)


def test_ordered_map_and_thread_count(monkeypatch):
    assert ordered_map(lambda x: x * x, range(10), threads=3) == [x * x for x in range(10)]
    monkeypatch.setenv("BIASCORRECT_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("BIASCORRECT_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()
