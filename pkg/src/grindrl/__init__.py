"""Model-based RL for object shaping by belt grinding.

Shape states are 3D point clouds; actions are oriented cutting planes. The
transition model composes a learning-free geometric plane cut with a
Gaussian-process model of how grinding resistance shifts the realized cut,
and a random-shooting MPC plans cut sequences against a chamfer objective.
"""

from .cutting import ActionBounds, CuttingSurface, Plane, apply_deviation, extract_features, plane_from_action, removal_volume, split
from .gp import GpHyperparams, GpModel, MultiOutputGp, fit, kernel, load_model, save_model
from .mbrl import (
    Dataset,
    EpisodeLog,
    ExperimentConfig,
    RunResult,
    collect_initial,
    run_episode,
    run_mbrl,
    shape_prediction_error_rate,
    steps_to_reference,
    train_csdm,
)
from .planner import GtDeviationOracle, PlannerConfig, PlanResult, cost, detect_overcut, eta, plan, predict_transition
from .pointcloud import BoundingBox, bounding_box, chamfer, downsample, load_cloud, save_cloud
from .sim_env import GrindingEnv, GtDeviationParams, ObjectSpec, gt_deviation, make_object

__version__ = "0.1.0"
