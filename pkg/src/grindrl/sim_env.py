"""Self-contained grinding environment.

Objects are solid blocks sampled as uniform volumetric point clouds: a flat
stock top to grind away and a kind-dependent target surface underneath
(A: wedge, B: step, C: pyramidal frustum). Ground-truth cutting-surface
deviation follows grinding-resistance proportionality: normal force scales
with removed volume over belt speed, so the realized plane sits above the
commanded one by an amount growing with the removal-volume proxy and the
contact angles. Cuts whose removal volume exceeds a threshold trip a
protection interrupt: the action aborts, the shape does not change, and a
sentinel deviation is recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cutting import (
    ActionBounds,
    CuttingSurface,
    apply_deviation,
    extract_features,
    plane_from_action,
    removal_volume,
    split,
)
from .pointcloud import ensure_cloud

OBJECT_KINDS = ("A", "B", "C")


@dataclass(frozen=True)
class ObjectSpec:
    """Geometry and sampling of one workpiece.

    The footprint is [-length/2, length/2] x [-width/2, width/2]; the solid
    spans z in [0, stock_top]. The target solid is everything at or below
    the kind's target surface, which must sit strictly under the stock top.
    """

    kind: str = "A"
    length: float = 10.0
    width: float = 8.0
    stock_top: float = 15.0
    density: float = 4.0  # points per unit volume
    # wedge (A): surface rises from wedge_low at x=-L/2 to wedge_high at +L/2
    wedge_low: float = 3.0
    wedge_high: float = 5.0
    # step (B): high shelf for x < 0, low shelf for x >= 0
    step_high: float = 5.0
    step_low: float = 3.0
    # frustum (C): flat top over [-top_x, top_x] x [-top_y, top_y], sloping sides
    frustum_top: float = 5.0
    frustum_top_x: float = 2.5
    frustum_top_y: float = 2.0
    frustum_slope: float = 0.5

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.density <= 0:
            raise ValueError("sampling density must be positive")
        if self.stock_top <= self.max_target_height():
            raise ValueError("stock top must sit strictly above the target surface")

    def target_surface(self, x, y) -> np.ndarray:
        """Target height field z_t(x, y) for this kind."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "A":
            slope = (self.wedge_high - self.wedge_low) / self.length
            return self.wedge_low + slope * (x + 0.5 * self.length)
        if self.kind == "B":
            return np.where(x < 0.0, self.step_high, self.step_low)
        over = np.maximum(
            np.maximum(np.abs(x) - self.frustum_top_x, np.abs(y) - self.frustum_top_y),
            0.0,
        )
        return self.frustum_top - self.frustum_slope * over

    def max_target_height(self) -> float:
        if self.kind == "A":
            return self.wedge_high
        if self.kind == "B":
            return self.step_high
        return self.frustum_top


@dataclass(frozen=True)
class GtDeviationParams:
    """Ground-truth deviation model and protection-interrupt settings."""

    k_sim: float = 3.0          # specific-resistance gain
    lam: float = 0.4            # tangential/normal force ratio (reserved)
    belt_speed: float = 2.0     # S_g > 0
    angle_gain: float = 0.3     # extra give for tilted contact
    v_max: float = 4.4          # interrupt threshold on the removal volume
    dev_large: float = 140.0    # sentinel deviation recorded on interrupt

    def __post_init__(self):
        if self.belt_speed <= 0 or self.v_max <= 0:
            raise ValueError("belt_speed and v_max must be positive")


def gt_deviation(a: CuttingSurface, volume: float, params: GtDeviationParams) -> float:
    """True cutting-surface deviation for an action removing `volume`.

    Proportional to volume over belt speed, amplified by contact angles;
    zero removal gives zero deviation. Above the interrupt threshold the
    sentinel value is returned instead.
    """
    if volume < 0:
        raise ValueError("removal volume must be non-negative")
    if volume > params.v_max:
        return params.dev_large
    angle_term = 1.0 + params.angle_gain * (abs(math.sin(a.roll)) + abs(math.sin(a.pitch)))
    return (params.k_sim * volume / params.belt_speed) * angle_term


def _sample_box(rng, n, length, width, z_top):
    pts = rng.uniform(
        low=[-0.5 * length, -0.5 * width, 0.0],
        high=[0.5 * length, 0.5 * width, z_top],
        size=(n, 3),
    )
    return pts


def make_object(spec: ObjectSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Sample (initial, target) clouds for a spec, deterministic per seed.

    The initial solid fills the whole stock box; the target cloud is an
    independent sampling of the target solid, so even a perfect grind
    leaves a small positive floor in the chamfer discrepancy, as with a
    real scanned reference.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    rng_init, rng_target = [np.random.default_rng(s) for s in root.spawn(2)]

    n_init = int(round(spec.density * spec.length * spec.width * spec.stock_top))
    initial = _sample_box(rng_init, n_init, spec.length, spec.width, spec.stock_top)

    # rejection-sample the target solid inside its bounding box
    top = spec.max_target_height()
    n_box = int(round(spec.density * spec.length * spec.width * top))
    cand = _sample_box(rng_target, n_box, spec.length, spec.width, top)
    target = cand[cand[:, 2] <= spec.target_surface(cand[:, 0], cand[:, 1])]
    return ensure_cloud(initial), ensure_cloud(target)


@dataclass
class EnvState:
    current: np.ndarray
    target: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class TransitionRecord:
    """Everything observed in one environment step."""

    action: CuttingSurface
    features: np.ndarray        # geometric features of the commanded cut
    removed_geom: np.ndarray    # fragment the commanded plane would remove
    volume: float               # removal-volume proxy of the commanded cut
    deviation: float            # realized deviation (sentinel when interrupted)
    interrupted: bool
    resulting: np.ndarray


class GrindingEnv:
    """Stateful grinding simulator: reset, then step up to the task horizon."""

    def __init__(
        self,
        spec: ObjectSpec,
        params: GtDeviationParams,
        bounds: ActionBounds,
        horizon: int,
        feature_mode: str = "sim",
    ):
        if horizon < 1:
            raise ValueError("task horizon must be >= 1")
        self.spec = spec
        self.params = params
        self.bounds = bounds
        self.horizon = horizon
        self.feature_mode = feature_mode
        self.state: EnvState | None = None

    def reset(self, seed) -> EnvState:
        initial, target = make_object(self.spec, seed)
        self.state = EnvState(current=initial, target=target, step_index=0)
        return self.state

    @property
    def current(self) -> np.ndarray:
        if self.state is None:
            raise RuntimeError("environment not reset")
        return self.state.current

    @property
    def target(self) -> np.ndarray:
        if self.state is None:
            raise RuntimeError("environment not reset")
        return self.state.target

    def step(self, a: CuttingSurface) -> TransitionRecord:
        if self.state is None:
            raise RuntimeError("environment not reset")
        if self.state.step_index >= self.horizon:
            raise RuntimeError(
                f"task horizon ({self.horizon}) exceeded; reset the environment"
            )
        current = self.state.current
        kept_geom, removed_geom = split(current, a)
        plane = plane_from_action(a)
        volume = removal_volume(removed_geom, plane)
        feats = extract_features(removed_geom, a, self.feature_mode)
        deviation = gt_deviation(a, volume, self.params)

        interrupted = volume > self.params.v_max
        if interrupted:
            resulting = current  # protection trip: the cut is aborted outright
        else:
            realized = apply_deviation(a, deviation, self.bounds)
            resulting, _ = split(current, realized)

        self.state = EnvState(
            current=resulting, target=self.state.target,
            step_index=self.state.step_index + 1,
        )
        return TransitionRecord(
            action=a,
            features=feats,
            removed_geom=removed_geom,
            volume=volume,
            deviation=deviation,
            interrupted=interrupted,
            resulting=resulting,
        )


def default_object_spec(kind: str, density: float = 4.0) -> ObjectSpec:
    """Stock ObjectSpec for a kind; geometry shared, target shapes differ."""
    return ObjectSpec(kind=kind, density=density)


def default_bounds() -> ActionBounds:
    return ActionBounds(roll_max=0.6, pitch_max=0.6, z_min=2.0, z_max=16.0)
