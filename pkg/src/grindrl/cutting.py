"""Plane cuts on point clouds.

An action is an oriented cutting plane given as (roll, pitch, z) about the
work origin: the +z axis is rotated by roll about x, then by pitch about y,
and the plane passes through (0, 0, z). Points with n.p > o lie on the tool
side and are removed by a cut; points exactly on the plane are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pointcloud import bounding_box, ensure_cloud

FEATURE_MODES = ("sim", "full")
FEATURE_DIM = {"sim": 2, "full": 6}


@dataclass(frozen=True)
class CuttingSurface:
    """One cutting action: plane orientation (radians) and height offset."""

    roll: float
    pitch: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.z])


@dataclass(frozen=True)
class ActionBounds:
    """Per-axis action box; rolls/pitches symmetric about zero."""

    roll_max: float
    pitch_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.roll_max < 0 or self.pitch_max < 0 or self.z_max < self.z_min:
            raise ValueError(f"invalid action bounds: {self}")

    def contains(self, a: CuttingSurface) -> bool:
        return (
            abs(a.roll) <= self.roll_max
            and abs(a.pitch) <= self.pitch_max
            and self.z_min <= a.z <= self.z_max
        )

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Uniform samples over the box, shape (n, 3) as [roll, pitch, z]."""
        size = 1 if n is None else n
        out = np.column_stack(
            [
                rng.uniform(-self.roll_max, self.roll_max, size),
                rng.uniform(-self.pitch_max, self.pitch_max, size),
                rng.uniform(self.z_min, self.z_max, size),
            ]
        )
        return out


@dataclass(frozen=True)
class Plane:
    """Oriented plane {p : normal . p = offset} with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,):
            raise ValueError("plane normal must be a 3-vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)

    def signed_distance(self, points) -> np.ndarray:
        pts = ensure_cloud(points, allow_empty=True)
        return pts @ self.normal - self.offset


def action_normal(roll: float, pitch: float) -> np.ndarray:
    """Unit normal of the cut plane: Ry(pitch) @ Rx(roll) @ ez."""
    return np.array(
        [
            math.sin(pitch) * math.cos(roll),
            -math.sin(roll),
            math.cos(pitch) * math.cos(roll),
        ]
    )


def plane_from_action(a: CuttingSurface) -> Plane:
    """Realize an action as a plane through (0, 0, a.z)."""
    n = action_normal(a.roll, a.pitch)
    return Plane(normal=n, offset=float(n[2] * a.z))


def batch_normals_offsets(actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized plane_from_action for an (n, 3) array of [roll, pitch, z]."""
    acts = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    roll, pitch, z = acts[:, 0], acts[:, 1], acts[:, 2]
    cos_r = np.cos(roll)
    normals = np.column_stack([np.sin(pitch) * cos_r, -np.sin(roll), np.cos(pitch) * cos_r])
    offsets = normals[:, 2] * z
    return normals, offsets


def split(cloud, a: CuttingSurface) -> tuple[np.ndarray, np.ndarray]:
    """Partition a cloud into (kept, removed) by the action's plane.

    removed holds the points strictly on the tool side; every input point
    lands in exactly one of the outputs.
    """
    pts = ensure_cloud(cloud)
    plane = plane_from_action(a)
    tool_side = plane.signed_distance(pts) > 0.0
    return pts[~tool_side], pts[tool_side]


def removal_volume(removed, plane: Plane) -> float:
    """Removal-volume proxy: mean unsigned point distance to the cut plane.

    This is not a true volume; larger and deeper fragments score higher,
    which is what the resistance model needs. Empty fragments score 0.
    """
    pts = ensure_cloud(removed, allow_empty=True)
    if pts.shape[0] == 0:
        return 0.0
    return float(np.mean(np.abs(plane.signed_distance(pts))))


def extract_features(removed, a: CuttingSurface, mode: str) -> np.ndarray:
    """Feature vector describing a removed fragment together with its action.

    mode "sim"  -> [V, roll]                      (2-dim)
    mode "full" -> [V, w, h, d, roll, pitch]      (6-dim)

    where V is the removal-volume proxy and (w, h, d) the fragment's
    bounding-box extents. An empty fragment has all-zero geometry.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")
    pts = ensure_cloud(removed, allow_empty=True)
    vol = removal_volume(pts, plane_from_action(a))
    if mode == "sim":
        return np.array([vol, a.roll])
    if pts.shape[0] == 0:
        w = h = d = 0.0
    else:
        box = bounding_box(pts)
        w, h, d = box.w, box.h, box.d
    return np.array([vol, w, h, d, a.roll, a.pitch])


def apply_deviation(a: CuttingSurface, delta: float, bounds: ActionBounds) -> CuttingSurface:
    """Shift the cut height by a deviation, clamped to the z bounds.

    The deviation acts on the depth axis: grinding resistance pushes the
    tool away from the material, so the realized plane sits at z + delta.
    A zero delta returns the action unchanged (bit-for-bit).
    """
    if delta == 0.0:
        return a
    z = min(max(a.z + delta, bounds.z_min), bounds.z_max)
    return CuttingSurface(roll=a.roll, pitch=a.pitch, z=z)
