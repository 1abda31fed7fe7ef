import numpy as np
import pytest

from biascorrect.errors import Diverged, EmptySystem, RankDeficient, UnknownPointId
from biascorrect.estimator import (
    ResidualSystem,
    SolverConfig,
    gauss_newton_step,
    numerical_rank,
    pseudo_inverse,
    solve_pose,
    stack_residuals,
)
from biascorrect.geometry import FrameObservations, Pose, pose_error, project, retract

from conftest import points_in_view, random_pose


def scene(rng, n=30, noise=0.0):
    pose = random_pose(rng, 0.5, 1.0)
    pts = points_in_view(rng, pose, n)
    uv = project(pose, pts) + rng.normal(0, noise, (n, 2))
    return pose, dict(enumerate(pts)), FrameObservations(0, np.arange(n), uv, noise**2)


@pytest.mark.parametrize("shape", [(12, 6), (6, 12), (40, 6)])
def test_pseudo_inverse_matches_numpy(rng, shape):
    M = rng.normal(size=shape)
    np.testing.assert_allclose(pseudo_inverse(M), np.linalg.pinv(M), atol=1e-12)


def test_pseudo_inverse_of_rank_deficient_matrix(rng):
    M = rng.normal(size=(10, 3)) @ rng.normal(size=(3, 6))
    P = pseudo_inverse(M)
    np.testing.assert_allclose(M @ P @ M, M, atol=1e-10)
    np.testing.assert_allclose(P @ M @ P, P, atol=1e-10)
    assert numerical_rank(M) == 3


def test_stack_residuals_zero_at_truth(rng):
    pose, lm, obs = scene(rng)
    sys = stack_residuals(pose, lm, obs)
    assert sys.n == 30 and sys.H_x.shape == (60, 6) and sys.H_p.shape == (30, 2, 3)
    assert np.max(np.abs(sys.residuals)) < 1e-14
    assert sys.cost < 1e-26


def test_stack_residuals_drops_points_behind_camera(rng):
    pose, lm, obs = scene(rng, n=10)
    lm = dict(lm)
    lm[4] = pose.translation - pose.rotation[:, 2]  # one metre behind the camera
    sys = stack_residuals(pose, lm, obs)
    assert sys.dropped_ids == (4,) and 4 not in sys.point_ids and sys.n == 9


def test_stack_residuals_errors(rng):
    pose, lm, obs = scene(rng, n=5)
    with pytest.raises(UnknownPointId):
        stack_residuals(pose, {k: v for k, v in lm.items() if k != 2}, obs)
    with pytest.raises(EmptySystem):
        stack_residuals(pose, lm, obs.subset([]))
    behind = {k: pose.translation - pose.rotation[:, 2] for k in lm}
    with pytest.raises(EmptySystem):
        stack_residuals(pose, behind, obs)


def test_gauss_newton_step_needs_six_dof(rng):
    pose, lm, obs = scene(rng, n=2)
    with pytest.raises(RankDeficient):
        gauss_newton_step(stack_residuals(pose, lm, obs))


def test_gauss_newton_step_is_minimum_norm_least_squares(rng):
    H = rng.normal(size=(20, 6))
    r = rng.normal(size=20)
    sys = ResidualSystem(r, H, np.zeros((10, 2, 3)), tuple(range(10)))
    np.testing.assert_allclose(gauss_newton_step(sys), -np.linalg.lstsq(H, r, rcond=None)[0], atol=1e-12)


@pytest.mark.parametrize("levenberg", [False, True])
def test_solver_recovers_truth_without_noise(rng, levenberg):
    pose, lm, obs = scene(rng)
    init = retract(pose, rng.normal(0, 0.05, 6))
    rep = solve_pose(init, lm, obs, SolverConfig(levenberg=levenberg, max_iterations=30))
    assert rep.converged
    assert np.linalg.norm(pose_error(rep.pose, pose)) < 1e-8
    assert rep.final_cost < 1e-20 and np.isfinite(rep.condition_number)


def test_solver_with_noise_reaches_stationary_point(rng):
    pose, lm, obs = scene(rng, n=100, noise=1e-3)
    rep = solve_pose(retract(pose, rng.normal(0, 0.02, 6)), lm, obs)
    sys = stack_residuals(rep.pose, lm, obs)
    # gradient of the cost vanishes at the solution
    assert np.max(np.abs(sys.H_x.T @ sys.residuals)) < 1e-10
    assert np.linalg.norm(pose_error(rep.pose, pose)) < 0.05


def test_solver_reports_divergence(monkeypatch, rng):
    pose, lm, obs = scene(rng)
    import biascorrect.estimator as est

    def uphill(sys):
        g = sys.H_x.T @ sys.residuals
        return 0.01 * g / np.linalg.norm(g)

    monkeypatch.setattr(est, "gauss_newton_step", uphill)
    with pytest.raises(Diverged):
        solve_pose(retract(pose, np.full(6, 0.01)), lm, obs)
