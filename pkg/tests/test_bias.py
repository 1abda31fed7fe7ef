import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biascorrect.bias import (
    DepthEstimate,
    MapPoint,
    TwoFrameGeometry,
    _rs,
    aggregate_pairs,
    bias_closed_form,
    build_flow_system,
    compute_foe,
    debias,
    derotate_bearings,
    inv_depth_bias_to_point_bias,
    map_point_bias,
    point_bias_along_rays,
    predict_flow,
    solve_inverse_depth,
    triangulate_multiview,
)
from biascorrect.errors import DegenerateFeature, FoeUndefined, InsufficientParallax, MismatchedPointSets
from biascorrect.estimator import pseudo_inverse
from biascorrect.geometry import Pose, camera_coordinates, project, se3_exp, so3_exp

from conftest import points_in_view, random_pose


def exact_pair(rng, n=20, V=(0.1, 0.05, 1.0), Omega=(0.02, -0.01, 0.005)):
    geom = TwoFrameGeometry(V, Omega)
    uv = rng.uniform(-0.5, 0.5, (n, 2))
    d = geom.V[2] / rng.uniform(2, 8, n)
    return geom, uv, d, uv + predict_flow(geom, uv, d)


def test_foe_and_guard():
    np.testing.assert_allclose(compute_foe([0.1, -0.2, 2.0]), [0.05, -0.1])
    for V in ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1e-7]):
        with pytest.raises(FoeUndefined):
            TwoFrameGeometry(V, np.zeros(3))


def test_predict_flow_trivial_cases():
    geom = TwoFrameGeometry([0.2, 0.1, 1.0], np.zeros(3))
    np.testing.assert_allclose(predict_flow(geom, geom.foe, 0.7), [0.0, 0.0])
    geom = TwoFrameGeometry([0.0, 0.0, 1.0], [0.0, 0.3, 0.0])
    np.testing.assert_allclose(predict_flow(geom, [0.0, 0.0], 0.0), [-0.3, 0.0])


def test_predict_flow_matches_moving_camera(rng):
    dt = 1e-4
    for _ in range(20):
        V, Om = rng.normal(0, 1, 3), rng.normal(0, 0.5, 3)
        V[2] = abs(V[2]) + 0.5
        X = points_in_view(rng, Pose.identity(), 5)
        moved = Pose(so3_exp(Om * dt), V * dt)
        fd = (project(moved, X) - project(Pose.identity(), X)) / dt
        geom = TwoFrameGeometry(V, Om)
        pred = predict_flow(geom, project(Pose.identity(), X), V[2] / X[:, 2])
        assert np.max(np.abs(pred - fd) / np.abs(fd).max()) < 1e-3


def test_rotation_derivatives_match_finite_differences(rng):
    uv = rng.uniform(-1, 1, (10, 2))
    h = 1e-6
    r, s = _rs(uv)
    analytic = {
        "r_x": np.column_stack([uv[:, 1], -2 * uv[:, 0], 0 * uv[:, 0]]),
        "r_y": np.column_stack([uv[:, 0], 0 * uv[:, 0], np.ones(10)]),
        "s_x": np.column_stack([0 * uv[:, 0], -uv[:, 1], -np.ones(10)]),
        "s_y": np.column_stack([2 * uv[:, 1], -uv[:, 0], 0 * uv[:, 0]]),
    }
    for axis, name in ((0, "x"), (1, "y")):
        e = np.zeros(2)
        e[axis] = h
        (rp, sp), (rm, sm) = _rs(uv + e), _rs(uv - e)
        np.testing.assert_allclose((rp - rm) / (2 * h), analytic[f"r_{name}"], atol=1e-8)
        np.testing.assert_allclose((sp - sm) / (2 * h), analytic[f"s_{name}"], atol=1e-8)


def test_flow_system_shapes_and_self_consistency(rng):
    geom, uv, d, uv_c = exact_pair(rng)
    sys = build_flow_system(geom, uv, uv_c)
    assert sys.A.shape == (40, 20) and sys.b.shape == (40,)
    np.testing.assert_allclose(sys.A @ d, sys.b, atol=1e-12)
    one = build_flow_system(geom, uv[:1], uv_c[:1])
    assert one.A.shape == (2, 1) and one.b.shape == (2,)


def test_feature_on_foe_is_degenerate():
    geom = TwoFrameGeometry([0.1, 0.0, 1.0], np.zeros(3))
    with pytest.raises(DegenerateFeature) as exc:
        build_flow_system(geom, [[0.3, 0.3], [0.1, 0.0]], [[0.31, 0.31], [0.1, 0.0]])
    assert exc.value.indices == (1,)


def test_solve_exact_hand_and_dense(rng):
    geom, uv, d, uv_c = exact_pair(rng)
    np.testing.assert_allclose(solve_inverse_depth(build_flow_system(geom, uv, uv_c)), d, atol=1e-12)
    noisy = build_flow_system(geom, uv + rng.normal(0, 0.01, uv.shape), uv_c + rng.normal(0, 0.01, uv.shape))
    dense = pseudo_inverse(noisy.A) @ noisy.b
    np.testing.assert_allclose(solve_inverse_depth(noisy), dense, atol=1e-10)
    hand = build_flow_system(TwoFrameGeometry([0, 0, 1.0], np.zeros(3)), [[2.0, 0.0]], [[3.0, 0.0]])
    assert hand.M_diag[0] == 4.0 and hand.v_rhs[0] == 2.0
    assert solve_inverse_depth(hand)[0] == 0.5


def test_derotated_pair_gives_exact_anchor_inverse_depth(rng):
    """A finite motion is exact for the flow model once the earlier bearings are derotated."""
    anchor = random_pose(rng, 0.3, 1.0)
    X = points_in_view(rng, anchor, 15)
    other = Pose(anchor.rotation @ so3_exp([0.05, -0.08, 0.03]), anchor.translation + anchor.rotation @ [0.1, 0.02, -0.3])
    geom = TwoFrameGeometry.from_poses(other, anchor, 0.2, derotate=True)
    uv_prev = derotate_bearings(other, anchor, project(other, X))
    sys = build_flow_system(geom, uv_prev, project(anchor, X))
    z = camera_coordinates(anchor, X)[:, 2]
    np.testing.assert_allclose(solve_inverse_depth(sys) / geom.V[2], 1.0 / z, rtol=1e-10)


def test_bias_trivial_cases(rng):
    geom, uv, d, uv_c = exact_pair(rng)
    sys = build_flow_system(geom, uv, uv_c)
    assert np.all(bias_closed_form(sys, geom, 0.0) == 0.0)
    flat = TwoFrameGeometry(geom.V, np.zeros(3))
    s2 = rng.uniform(1e-6, 1e-4, len(d))
    sys0 = build_flow_system(flat, uv, uv + predict_flow(flat, uv, d))
    np.testing.assert_allclose(bias_closed_form(sys0, flat, s2), 2 * s2 * sys0.v_rhs / sys0.M_diag**2, rtol=1e-15)


@given(st.floats(1e-8, 1e-2))
def test_bias_is_linear_in_variance(s2):
    rng = np.random.default_rng(1)
    geom, uv, d, uv_c = exact_pair(rng)
    sys = build_flow_system(geom, uv, uv_c)
    np.testing.assert_allclose(bias_closed_form(sys, geom, 2 * s2), 2 * bias_closed_form(sys, geom, s2), rtol=1e-14)


def est(ids, d, mu):
    return DepthEstimate(ids, d, mu)


def test_aggregate_pairs(rng):
    a = est([1, 2, 3], rng.normal(size=3), rng.normal(size=3))
    assert aggregate_pairs([a]) is a
    same = aggregate_pairs([a] * 4)
    np.testing.assert_array_equal(same.d_hat, a.d_hat)
    np.testing.assert_array_equal(same.bias_mu, a.bias_mu)
    many = [est([1, 2, 3], rng.normal(size=3), rng.normal(size=3)) for _ in range(4)]
    agg = aggregate_pairs(many)
    np.testing.assert_allclose(agg.d_hat, sum(m.d_hat for m in many) / 4, rtol=1e-15)
    np.testing.assert_allclose(agg.bias_mu, sum(m.bias_mu for m in many) / 4, rtol=1e-15)
    assert agg.L_used == 4
    with pytest.raises(MismatchedPointSets):
        aggregate_pairs([a, est([1, 3, 2], a.d_hat, a.bias_mu)])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_debias_is_exact_subtraction(values):
    d = np.array(values)
    mu = d[::-1] * 0.1
    e = est(range(len(d)), d + mu, mu)
    assert np.all(debias(e) + e.bias_mu == e.d_hat)


def test_debias_and_map_point_bias_examples():
    assert debias(est([0], [1.0], [0.1]))[0] == pytest.approx(0.9)
    assert debias(est([0], [1.0], [0.0]))[0] == 1.0
    assert map_point_bias(np.array([0.55]), np.array([0.50]))[0] == pytest.approx(0.05)
    assert map_point_bias(np.array([0.5]), np.array([0.5]))[0] == 0.0
    with pytest.raises(MismatchedPointSets):
        map_point_bias(np.ones(2), np.ones(3))


def test_point_bias_examples():
    mp = MapPoint(0, [0.0, 0.0, 2.0], 0, 0.5, bias_inv_depth=0.05)
    np.testing.assert_allclose(inv_depth_bias_to_point_bias(mp, Pose.identity()), [0.0, 0.0, -0.2])
    zero = MapPoint(0, [0.3, 0.1, 2.0], 0, 0.5)
    assert np.all(inv_depth_bias_to_point_bias(zero, Pose.identity()) == 0.0)
    with pytest.raises(FoeUndefined):
        inv_depth_bias_to_point_bias(mp, Pose.identity(), v_z=0.0)
    with pytest.raises(ValueError):
        MapPoint(0, [0, 0, 1.0], 0, 0.0)


def test_point_bias_matches_retriangulation(rng):
    anchor = random_pose(rng, 0.5, 1.0)
    X = points_in_view(rng, anchor, 50)
    z = camera_coordinates(anchor, X)[:, 2]
    d_tilde = 1.0 / z
    mu = d_tilde * rng.uniform(-0.05, 0.05, 50)
    mu_p = point_bias_along_rays(X, d_tilde, mu, anchor)
    # mu_p is the map-minus-truth displacement; rebuild the unbiased point along the same ray
    Xa = camera_coordinates(anchor, X)
    rebuilt = (Xa * (d_tilde / (d_tilde - mu))[:, None]) @ anchor.rotation.T + anchor.translation
    rel = np.linalg.norm(X - mu_p - rebuilt, axis=1) / np.linalg.norm(rebuilt - anchor.translation, axis=1)
    assert rel.max() < 1e-2
    # first-order agreement: the mismatch shrinks quadratically with the bias
    small = point_bias_along_rays(X, d_tilde, mu * 0.01, anchor)
    rebuilt_small = (Xa * (d_tilde / (d_tilde - 0.01 * mu))[:, None]) @ anchor.rotation.T + anchor.translation
    rel_small = np.linalg.norm(X - small - rebuilt_small, axis=1) / np.linalg.norm(rebuilt_small - X, axis=1)
    assert rel_small.max() < 1e-3


def test_triangulation(rng):
    poses = [random_pose(rng, 0.1, 1.0)]
    for _ in range(4):
        poses.append(Pose(poses[0].rotation @ so3_exp(rng.normal(0, 0.05, 3)), poses[0].translation + rng.normal(0, 0.3, 3)))
    X = points_in_view(rng, poses[0], 1, depth=(3, 5))[0]
    uvs = [project(p, X) for p in poses]
    p2, d2 = triangulate_multiview(poses[:2], uvs[:2])
    np.testing.assert_allclose(p2, X, atol=1e-10)
    assert d2 == pytest.approx(1.0 / camera_coordinates(poses[0], X)[2], rel=1e-10)
    p5, d5 = triangulate_multiview(poses, uvs)
    np.testing.assert_allclose(p5, p2, atol=1e-9)
    assert d5 == pytest.approx(d2, rel=1e-9)
    with pytest.raises(InsufficientParallax):
        triangulate_multiview([poses[0], poses[0]], [uvs[0], uvs[0]])
