"""Pose correction for visual SLAM front ends from map-point inverse-depth bias.

The package estimates, for each keyframe, how biased landmark depths shift a
Gauss-Newton pose solution and removes that expected shift. It also ships a
simulator and Monte Carlo oracles that check every closed form it uses.
"""

from .bias import (
    DepthEstimate,
    FlowSystem,
    MapPoint,
    TwoFrameGeometry,
    aggregate_pairs,
    bias_closed_form,
    build_flow_system,
    debias,
    inv_depth_bias_to_point_bias,
    map_point_bias,
    predict_flow,
    solve_inverse_depth,
    triangulate_multiview,
)
from .correction import (
    BiasBundle,
    BiasEntry,
    CorrectionResult,
    FrameWindow,
    GateConfig,
    PipelineConfig,
    correct_pose,
    expected_pose_error,
    filter_bias_entries,
    gate_threshold,
    run_keyframe_pipeline,
)
from .errors import *  # noqa: F401,F403
from .estimator import ResidualSystem, SolverConfig, gauss_newton_step, pseudo_inverse, solve_pose, stack_residuals
from .evaluation import ApeReport, Trajectory, ape_translation, associate, load_trajectory, save_trajectory
from .geometry import (
    CameraModel,
    FrameObservations,
    Observation,
    Pose,
    jacobian_point,
    jacobian_pose,
    project,
    se3_apply,
    se3_compose,
    se3_exp,
    se3_inverse,
    se3_log,
)
from .config import RunConfig, load_run_config
from .runner import SequenceResult, run_sequence
from .sim import GroundTruth, SceneConfig, generate_scene, observe

__version__ = "0.1.0"
