"""Iterative model learning and control: collect, plan, execute, retrain.

One experiment = initial random data collection (proposed policy only),
then N episodes of MPC execution with the deviation model refit on the
accumulated dataset after every episode. Baselines reuse the same episode
machinery: random (uniform actions, re-drawn while they would cut into the
target), geometric (MPC with no deviation model), and an oracle variant
planning with the simulator's true deviation.

All randomness flows from one master seed through fixed SeedSequence
slots, so a full experiment is bit-for-bit reproducible and the planner
sees identical candidate draws at (episode, step) regardless of policy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cutting import (
    ActionBounds,
    CuttingSurface,
    FEATURE_MODES,
    apply_deviation,
    plane_from_action,
    removal_volume,
    split,
)
from .gp import GpModel, fit
from .planner import (
    GtDeviationOracle,
    PlannerConfig,
    as_predictor,
    eta,
    plan,
    plane_overcut,
    predict_transition,
)
from .pointcloud import chamfer
from .sim_env import GrindingEnv, GtDeviationParams, ObjectSpec
from .sim_env import default_bounds, default_object_spec

POLICIES = ("random", "geometric", "proposed", "proposed_gt")

# SeedSequence slot tags: one stream per concern, identical across policies
_SLOT_RESET, _SLOT_INIT, _SLOT_PLAN, _SLOT_FIT = 1, 2, 3, 4


class ConfigError(ValueError):
    """Experiment configuration cannot be executed as given."""


@dataclass(frozen=True)
class ExperimentConfig:
    policy: str = "proposed"
    object_spec: ObjectSpec = field(default_factory=lambda: default_object_spec("A"))
    env_params: GtDeviationParams = field(default_factory=GtDeviationParams)
    bounds: ActionBounds = field(default_factory=default_bounds)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    n_episodes: int = 5
    task_horizon: int = 40
    n_init: int = 15
    init_volume_range: tuple[float, float] = (0.0, 4.0)
    init_max_retries: int = 100
    feature_mode: str = "sim"
    gp_restarts: int = 5
    seed: int = 0
    reference_err: float | None = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")
        if self.n_init < 1 or self.task_horizon < 1 or self.n_episodes < 1:
            raise ConfigError("n_init, task_horizon and n_episodes must all be >= 1")
        lo, hi = self.init_volume_range
        if not (0.0 <= lo <= hi):
            raise ConfigError(f"bad init volume range {self.init_volume_range}")


@dataclass
class Dataset:
    """Deviation-model training rows; interrupted steps never enter."""

    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    n_interrupted: int = 0

    def append(self, x, y: float) -> None:
        self.X.append(np.asarray(x, dtype=np.float64))
        self.Y.append(float(y))

    def extend(self, rows) -> None:
        for x, y in rows:
            self.append(x, y)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.X), np.array(self.Y)

    def __len__(self) -> int:
        return len(self.Y)


@dataclass
class StepRecord:
    t: int
    chamfer_before: float
    roll: float
    pitch: float
    z: float
    deviation: float
    predicted_err: float
    realized_err: float
    cost_shape: float
    cost_overcut: float
    cost_var: float
    interrupted: bool
    volume: float
    wall_time: float


@dataclass
class EpisodeLog:
    episode: int
    policy: str
    init_chamfer: float
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def final_chamfer(self) -> float:
        return self.steps[-1].realized_err if self.steps else self.init_chamfer

    @property
    def n_interrupts(self) -> int:
        return sum(1 for s in self.steps if s.interrupted)

    def realized_errors(self) -> list[float]:
        return [s.realized_err for s in self.steps]


@dataclass
class RunResult:
    config: ExperimentConfig
    episodes: list[EpisodeLog]
    model: GpModel | None
    dataset: Dataset

    def learning_curve(self) -> list[float]:
        return [ep.final_chamfer for ep in self.episodes]


def _seed(master: int, slot: int, *rest: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master, slot, *rest))


def collect_initial(
    env: GrindingEnv,
    n: int,
    volume_range: tuple[float, float],
    seed,
    max_retries: int = 100,
) -> Dataset:
    """Execute n random actions whose geometric removal volume lies in range.

    Actions are rejection-sampled against the current shape; interrupted
    executions are counted but their rows are excluded from the dataset.
    """
    if n < 1:
        raise ValueError("need at least one initial sample")
    lo, hi = volume_range
    rng = np.random.default_rng(seed)
    data = Dataset()
    for _ in range(n):
        for attempt in range(max_retries):
            a = CuttingSurface(*env.bounds.sample(rng)[0])
            _, removed = split(env.current, a)
            vol = removal_volume(removed, plane_from_action(a))
            if lo <= vol <= hi:
                break
        else:
            raise ConfigError(
                f"no action with removal volume in [{lo}, {hi}] "
                f"found after {max_retries} attempts"
            )
        rec = env.step(a)
        if rec.interrupted:
            data.n_interrupted += 1
        else:
            data.append(rec.features, rec.deviation)
    return data


def train_csdm(dataset: Dataset, restarts: int = 5, seed=None,
               max_lengthscale: float = 1.5) -> GpModel:
    """Fit the deviation model on the accumulated (features -> deviation) rows.

    The lengthscale cap keeps predictive variance honest outside the data:
    interrupted cuts never enter the dataset, so the region beyond the
    protection threshold is exactly where the planner must see uncertainty
    rather than a confident smooth extrapolation.
    """
    if len(dataset) < 1:
        raise ValueError("dataset is empty; nothing to train on")
    X, Y = dataset.as_arrays()
    return fit(X, Y, restarts=restarts, seed=seed, max_lengthscale=max_lengthscale)


def _policy_predictor(policy: str, model, env_params: GtDeviationParams):
    if policy == "proposed":
        if model is None:
            raise ConfigError("proposed policy requires a trained deviation model")
        return model
    if policy == "proposed_gt":
        return GtDeviationOracle(env_params)
    return None  # geometric and random predict with pure geometry


def _random_action(env: GrindingEnv, rng, overcut_depth: float, max_retries: int = 100):
    """Uniform action, re-drawn while its cut plane digs into the target."""
    a = None
    for _ in range(max_retries):
        a = CuttingSurface(*env.bounds.sample(rng)[0])
        if not plane_overcut(env.target, a, overcut_depth):
            return a
    return a


def _realized_action(a: CuttingSurface, predictor, feats, bounds: ActionBounds):
    """The plane the predictor expects to realize for a commanded action."""
    pred = as_predictor(predictor)
    if pred is None:
        return a
    acts = a.as_array()[None, :]
    dev, _ = pred.predict_deviation(feats[None, :], acts)
    return apply_deviation(a, float(dev[0]), bounds)


def run_episode(
    env: GrindingEnv,
    model,
    policy: str,
    cfg: ExperimentConfig,
    episode_index: int = 1,
    collect: bool = True,
) -> tuple[EpisodeLog, list]:
    """Run one task-horizon episode in a freshly reset environment.

    Returns the per-step log and the new (features, deviation) dataset rows
    gathered from non-interrupted steps.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    predictor = _policy_predictor(policy, model, cfg.env_params)
    target = env.target
    init_err = chamfer(env.current, target)
    log = EpisodeLog(episode=episode_index, policy=policy, init_chamfer=init_err)
    rows = []

    for t in range(1, cfg.task_horizon + 1):
        t0 = time.perf_counter()
        s = env.current
        cur_err = chamfer(s, target)
        step_seed = _seed(cfg.seed, _SLOT_PLAN, episode_index, t)

        if policy == "random":
            a = _random_action(env, np.random.default_rng(step_seed), cfg.planner.overcut_depth)
        else:
            result = plan(s, target, predictor, cfg.planner, cur_err, init_err, seed=step_seed)
            a = result.first

        pred_cloud, feats, var = predict_transition(s, a, predictor, cfg.feature_mode, cfg.bounds)
        pred_err = chamfer(pred_cloud, target) if pred_cloud.shape[0] else float("inf")
        overcut_pred = plane_overcut(target, _realized_action(a, predictor, feats, cfg.bounds),
                                     cfg.planner.overcut_depth)
        eta_val = max(eta(cfg.planner.alpha, cfg.planner.beta, cur_err, init_err),
                      cfg.planner.eta_floor)

        rec = env.step(a)
        realized_err = chamfer(rec.resulting, target)
        if collect and not rec.interrupted:
            rows.append((rec.features, rec.deviation))

        log.steps.append(
            StepRecord(
                t=t,
                chamfer_before=cur_err,
                roll=a.roll,
                pitch=a.pitch,
                z=a.z,
                deviation=rec.deviation,
                predicted_err=pred_err,
                realized_err=realized_err,
                cost_shape=pred_err,
                cost_overcut=cfg.planner.overcut_penalty if overcut_pred else 0.0,
                cost_var=eta_val * var,
                interrupted=rec.interrupted,
                volume=rec.volume,
                wall_time=time.perf_counter() - t0,
            )
        )
    return log, rows


def run_mbrl(cfg: ExperimentConfig, model: GpModel | None = None) -> RunResult:
    """Full experiment: initial collection, then episodic MPC with retraining.

    Only the proposed policy collects initial data and retrains; baselines
    run the same episode loop with their fixed predictors. Passing a
    pre-trained `model` with the proposed policy evaluates it frozen (no
    initial collection, no retraining), the shape-generalization protocol.
    """
    env = GrindingEnv(
        cfg.object_spec, cfg.env_params, cfg.bounds,
        horizon=cfg.task_horizon, feature_mode=cfg.feature_mode,
    )
    dataset = Dataset()
    frozen = model is not None
    learn = cfg.policy == "proposed" and not frozen

    if learn:
        init_env = GrindingEnv(
            cfg.object_spec, cfg.env_params, cfg.bounds,
            horizon=cfg.n_init, feature_mode=cfg.feature_mode,
        )
        init_env.reset(_seed(cfg.seed, _SLOT_RESET, 0))
        dataset = collect_initial(
            init_env, cfg.n_init, cfg.init_volume_range,
            _seed(cfg.seed, _SLOT_INIT), cfg.init_max_retries,
        )
        model = train_csdm(dataset, cfg.gp_restarts, _seed(cfg.seed, _SLOT_FIT, 0))

    episodes = []
    for e in range(1, cfg.n_episodes + 1):
        env.reset(_seed(cfg.seed, _SLOT_RESET, e))
        log, rows = run_episode(env, model, cfg.policy, cfg, episode_index=e)
        episodes.append(log)
        if learn:
            dataset.extend(rows)
            model = train_csdm(dataset, cfg.gp_restarts, _seed(cfg.seed, _SLOT_FIT, e))
    return RunResult(config=cfg, episodes=episodes, model=model, dataset=dataset)


def shape_prediction_error_rate(pred_cloud, real_cloud, target) -> float:
    """Relative error (percent) of the predicted vs realized target distance."""
    d_pred = chamfer(pred_cloud, target)
    d_real = chamfer(real_cloud, target)
    if d_real <= 0:
        raise ValueError("realized shape error is zero; rate is undefined")
    return abs(d_pred - d_real) / d_real * 100.0


def steps_to_reference(log: EpisodeLog, reference_err: float) -> int | None:
    """First 1-based step whose realized error reaches the reference line."""
    for step in log.steps:
        if step.realized_err <= reference_err:
            return step.t
    return None
