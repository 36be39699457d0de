"""Forward shape prediction and random-shooting MPC.

A candidate cut only ever removes points, so every rollout state is a
subset of the planning cloud. plan() exploits that: states are boolean
masks over one downsampled cloud, distances to the target are computed
once per call, and all candidates advance through the horizon together in
vectorized steps. Results are index-ordered, so the argmin (ties to the
lowest sample index) is deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cutting import (
    ActionBounds,
    CuttingSurface,
    FEATURE_MODES,
    apply_deviation,
    batch_normals_offsets,
    extract_features,
    plane_from_action,
    split,
)
from .gp import GpModel
from .pointcloud import chamfer, downsample, ensure_cloud, mean_nn_spacing
from .sim_env import GtDeviationParams

_DIR2_CHUNK = 64

try:
    from numba import njit

    @njit(cache=True)
    def _walk_target_mins(order, d2_sorted, alive):
        # for each candidate and target point: distance to the nearest alive
        # planning point, found by walking the precomputed distance order
        B = alive.shape[0]
        m, n = order.shape
        out = np.empty(B)
        for b in range(B):
            acc = 0.0
            for i in range(m):
                v = np.inf
                for j in range(n):
                    if alive[b, order[i, j]]:
                        v = d2_sorted[i, j]
                        break
                acc += v
            out[b] = acc / m
        return out

except ImportError:  # pragma: no cover - exercised only without numba
    _walk_target_mins = None


@dataclass(frozen=True)
class PlannerConfig:
    """Random-shooting MPC settings."""

    horizon: int = 3
    n_samples: int = 800
    alpha: float = 24.0           # variance-cost scale
    beta: float = 1.0             # variance-cost reduction exponent
    overcut_penalty: float = 1000.0
    eta_floor: float = 0.0
    bounds: ActionBounds = field(default_factory=lambda: ActionBounds(0.6, 0.6, 2.0, 16.0))
    feature_mode: str = "sim"
    downsample_n: int | None = 200  # planning-cloud size; None plans at full resolution
    overcut_depth: float = 0.1      # tolerated cut incursion into the target cloud
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.n_samples < 1:
            raise ValueError("horizon and n_samples must be >= 1")
        if self.overcut_penalty <= 0:
            raise ValueError("overcut penalty must be positive")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")


@dataclass
class PlanResult:
    actions: list[CuttingSurface]       # best sequence, length = horizon
    cost: float                         # its mean per-step cost
    candidate_costs: np.ndarray         # full cost table, index-aligned with samples

    @property
    def first(self) -> CuttingSurface:
        return self.actions[0]


class GtDeviationOracle:
    """Deviation predictor backed by the simulator's ground-truth model.

    Reproduces gt_deviation exactly (interrupt sentinel included), reports
    zero predictive variance, and foresees protection aborts so its
    one-step predictions match the environment outcome point for point.
    """

    def __init__(self, params: GtDeviationParams):
        self.params = params

    def predict_deviation(self, feats: np.ndarray, actions: np.ndarray):
        vol = feats[:, 0]
        p = self.params
        angle_term = 1.0 + p.angle_gain * (
            np.abs(np.sin(actions[:, 0])) + np.abs(np.sin(actions[:, 1]))
        )
        dev = np.where(vol > p.v_max, p.dev_large, (p.k_sim * vol / p.belt_speed) * angle_term)
        return dev, np.zeros_like(dev)

    def predict_abort(self, feats: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return feats[:, 0] > self.params.v_max


class GpDeviationPredictor:
    """Deviation predictor backed by a trained GP; ignores raw actions.

    Interrupted steps never reach the training data, so the model cannot
    foresee aborts; uncertainty in that regime shows up as variance.
    """

    def __init__(self, model: GpModel):
        self.model = model

    def predict_deviation(self, feats: np.ndarray, actions: np.ndarray):
        return self.model.predict_batch(feats)


def as_predictor(model):
    """None (geometric), a GpModel, or any predict_deviation object."""
    if model is None:
        return None
    if isinstance(model, GpModel):
        return GpDeviationPredictor(model)
    if hasattr(model, "predict_deviation"):
        return model
    raise TypeError(f"cannot use {type(model).__name__} as a deviation predictor")


def eta(alpha: float, beta: float, current_err: float, init_err: float) -> float:
    """Variance-cost coefficient: alpha * (current_err / init_err) ** beta.

    Shrinks as the shape approaches the target so late, fine cuts are not
    drowned out by model-uncertainty caution.
    """
    if init_err <= 0:
        raise ValueError("init_err must be positive")
    if current_err < 0:
        raise ValueError("current_err must be non-negative")
    return float(alpha * (current_err / init_err) ** beta)


def detect_overcut(pred_cloud, target, margin: float | None = None) -> bool:
    """True when some target material is no longer covered by the cloud.

    A target point farther than `margin` from every predicted point means
    the cut dug into the target. Margin defaults to twice the target's mean
    nearest-neighbour spacing so sampling jitter alone never trips it.
    """
    tgt = ensure_cloud(target)
    pred = ensure_cloud(pred_cloud, allow_empty=True)
    if pred.shape[0] == 0:
        return True
    if margin is None:
        margin = 2.0 * mean_nn_spacing(tgt)
    d, _ = cKDTree(pred).query(tgt, k=1)
    return bool(d.max() > margin)


def plane_overcut(target, a: CuttingSurface, depth: float) -> bool:
    """True when a cut plane dips more than `depth` into the target cloud.

    Point-free variant of the over-cut test used during planning: instead
    of asking whether the predicted cloud still covers the target (whose
    worst-case coverage distance is dominated by sampling noise, especially
    on downsampled planning clouds), it checks the cut geometry itself.
    """
    tgt = ensure_cloud(target)
    p = plane_from_action(a)
    return bool(p.signed_distance(tgt).max() > depth)


def cost(
    pred_cloud,
    target,
    var: float,
    eta_val: float,
    *,
    penalty: float = 1000.0,
    margin: float | None = None,
    downsample_n: int | None = None,
    seed=None,
) -> float:
    """Shape-error + over-cut + weighted-variance cost of a predicted state.

    With downsample_n set, both clouds are subsampled before the chamfer
    and over-cut terms to bound planning cost.
    """
    pred = ensure_cloud(pred_cloud)
    tgt = ensure_cloud(target)
    if downsample_n is not None:
        rng = np.random.default_rng(seed)
        pred = downsample(pred, downsample_n, rng)
        tgt = downsample(tgt, downsample_n, rng)
    c = chamfer(pred, tgt)
    if detect_overcut(pred, tgt, margin):
        c += penalty
    return float(c + eta_val * var)


def predict_transition(s, a: CuttingSurface, model, mode: str, bounds: ActionBounds):
    """One-step shape prediction: geometric split at the deviated plane.

    Splits at the commanded plane, extracts removal features, asks the
    deviation predictor (absent -> zero deviation and variance, the pure
    geometric model), then re-splits at the deviated plane.

    Returns (predicted cloud, feature vector, predictive variance).
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    pts = ensure_cloud(s)
    _, removed = split(pts, a)
    feats = extract_features(removed, a, mode)
    predictor = as_predictor(model)
    if predictor is None:
        dev, var = 0.0, 0.0
    else:
        acts = a.as_array()[None, :]
        dev_arr, var_arr = predictor.predict_deviation(feats[None, :], acts)
        dev, var = float(dev_arr[0]), float(var_arr[0])
        if hasattr(predictor, "predict_abort") and predictor.predict_abort(feats[None, :], acts)[0]:
            return pts, feats, var
    realized = apply_deviation(a, dev, bounds)
    pred, _ = split(pts, realized)
    return pred, feats, var


def _batch_features(sd, removed, acts, coords, mode):
    """Feature matrix for every candidate's removed fragment.

    sd: (B, n) signed distances, removed: (B, n) masks, acts: (B, 3),
    coords: (n, 3) planning points.
    """
    cnt = removed.sum(axis=1)
    vol_sum = np.where(removed, sd, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore"):
        vol = np.where(cnt > 0, vol_sum / np.maximum(cnt, 1), 0.0)
    if mode == "sim":
        return np.column_stack([vol, acts[:, 0]])
    ext = []
    for axis in range(3):
        col = coords[:, axis][None, :]
        hi = np.where(removed, col, -np.inf).max(axis=1)
        lo = np.where(removed, col, np.inf).min(axis=1)
        ext.append(np.where(cnt > 0, hi - lo, 0.0))
    return np.column_stack([vol, ext[0], ext[1], ext[2], acts[:, 0], acts[:, 1]])


def _masked_target_mins(d2sq, alive, sorted_cache=None):
    """Per-candidate mean over target points of the min squared distance
    to the alive subset (the target-to-prediction chamfer direction)."""
    if _walk_target_mins is not None and sorted_cache is not None:
        order, d2_sorted = sorted_cache
        return _walk_target_mins(order, d2_sorted, alive)
    B = alive.shape[0]
    mean_out = np.empty(B)
    for lo in range(0, B, _DIR2_CHUNK):
        sub = alive[lo : lo + _DIR2_CHUNK]
        masked = np.where(sub[:, None, :], d2sq[None, :, :], np.inf)
        mean_out[lo : lo + _DIR2_CHUNK] = masked.min(axis=2).mean(axis=1)
    return mean_out


def plan(
    s,
    target,
    model,
    cfg: PlannerConfig,
    current_err: float,
    init_err: float,
    seed=None,
) -> PlanResult:
    """Random-shooting MPC over the composed transition model.

    Samples n_samples action sequences of length horizon uniformly within
    the bounds, rolls each through the (possibly deviation-aware) cutting
    model, and returns the sequence with the lowest mean per-step cost.
    """
    pts_full = ensure_cloud(s)
    tgt_full = ensure_cloud(target)
    predictor = as_predictor(model)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    B, H = cfg.n_samples, cfg.horizon
    flat = cfg.bounds.sample(rng, B * H)
    candidates = flat.reshape(B, H, 3)

    if cfg.downsample_n is not None:
        pts = downsample(pts_full, cfg.downsample_n, rng)
        tgt = downsample(tgt_full, cfg.downsample_n, rng)
    else:
        pts, tgt = pts_full, tgt_full

    eta_val = max(eta(cfg.alpha, cfg.beta, current_err, init_err), cfg.eta_floor)

    # geometry against the target is fixed for the whole call
    d1sq = cKDTree(tgt).query(pts, k=1)[0] ** 2          # point -> target
    d2sq = cdist(tgt, pts, metric="sqeuclidean")         # target x points
    sorted_cache = None
    if _walk_target_mins is not None:
        order = np.argsort(d2sq, axis=1)
        sorted_cache = (order, np.take_along_axis(d2sq, order, axis=1))

    alive = np.ones((B, pts.shape[0]), dtype=bool)
    total = np.zeros(B)
    z_min, z_max = cfg.bounds.z_min, cfg.bounds.z_max

    for tau in range(H):
        acts = candidates[:, tau, :]
        normals, offsets = batch_normals_offsets(acts)
        dots = normals @ pts.T                            # (B, n)
        sd = dots - offsets[:, None]

        if predictor is None:
            dev = np.zeros(B)
            var = np.zeros(B)
            aborts = None
        else:
            removed = alive & (sd > 0.0)
            feats = _batch_features(sd, removed, acts, pts, cfg.feature_mode)
            dev, var = predictor.predict_deviation(feats, acts)
            aborts = None
            if hasattr(predictor, "predict_abort"):
                aborts = predictor.predict_abort(feats, acts)

        z_dev = np.clip(acts[:, 2] + dev, z_min, z_max)
        off_dev = normals[:, 2] * z_dev
        next_alive = alive & ~(dots > off_dev[:, None])
        # realized plane dipping into the target = over-cut; aborted cuts
        # never touch the material
        tdots = normals @ tgt.T
        overcut = (tdots > off_dev[:, None] + cfg.overcut_depth).any(axis=1)
        if aborts is not None and aborts.any():
            next_alive = np.where(aborts[:, None], alive, next_alive)
            overcut &= ~aborts
        alive = next_alive

        cnt = alive.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            dir1 = np.where(cnt > 0, (alive @ d1sq) / np.maximum(cnt, 1), np.inf)
        dir2 = _masked_target_mins(d2sq, alive, sorted_cache)
        total += dir1 + dir2 + np.where(overcut, cfg.overcut_penalty, 0.0) + eta_val * var

    costs = total / H
    best = int(np.argmin(costs))
    actions = [CuttingSurface(*map(float, candidates[best, tau])) for tau in range(H)]
    return PlanResult(actions=actions, cost=float(costs[best]), candidate_costs=costs)
