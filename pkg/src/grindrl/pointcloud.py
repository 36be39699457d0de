"""Point clouds as (N, 3) float arrays: I/O, subsampling, and shape discrepancy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "BoundingBox",
    "ensure_cloud",
    "chamfer",
    "bounding_box",
    "load_cloud",
    "save_cloud",
    "downsample",
    "mean_nn_spacing",
]


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned extents (max - min per axis) of a cloud."""

    w: float
    h: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.h, self.d])


def ensure_cloud(points, allow_empty: bool = False) -> np.ndarray:
    """Coerce to an (N, 3) float64 array and validate it.

    All coordinates must be finite. Empty clouds are rejected unless
    ``allow_empty`` is set (file I/O is the one place they are legal).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if pts.shape[0] == 0 and not allow_empty:
        raise ValueError("point cloud is empty")
    if pts.shape[0] > 0 and not np.isfinite(pts).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


def chamfer(s1, s2) -> float:
    """Symmetric mean-of-minimum squared distance between two clouds.

    For each point in one cloud the squared distance to its nearest
    neighbour in the other is averaged; the two directed means are summed.
    Identical clouds give exactly 0; the value is symmetric in (s1, s2).
    """
    a = ensure_cloud(s1)
    b = ensure_cloud(s2)
    d_ab = cKDTree(b).query(a, k=1)[0]
    d_ba = cKDTree(a).query(b, k=1)[0]
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


def bounding_box(cloud) -> BoundingBox:
    """Axis-aligned bounding-box extents of a non-empty cloud."""
    pts = ensure_cloud(cloud)
    ext = pts.max(axis=0) - pts.min(axis=0)
    return BoundingBox(float(ext[0]), float(ext[1]), float(ext[2]))


def save_cloud(cloud, path) -> None:
    """Write a cloud as ASCII, one "x y z" triple per line."""
    pts = ensure_cloud(cloud, allow_empty=True)
    with open(path, "w") as fh:
        for p in pts:
            # repr of a Python float round-trips exactly
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def load_cloud(path) -> np.ndarray:
    """Read an ASCII "x y z" cloud file; the empty file is the empty cloud."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 3 fields, got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise CloudFormatError(
                    f"{path}:{lineno}: could not parse {stripped!r} as x y z"
                ) from None
    return ensure_cloud(rows, allow_empty=True)


def downsample(cloud, n: int, seed) -> np.ndarray:
    """Uniform random subset without replacement of size min(n, len(cloud)).

    Deterministic for a given seed. For n >= len(cloud) the full cloud is
    returned (in permuted order).
    """
    if n < 1:
        raise ValueError("downsample size must be >= 1")
    pts = ensure_cloud(cloud, allow_empty=True)
    if pts.shape[0] == 0:
        return pts
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=min(n, pts.shape[0]), replace=False)
    return pts[idx]


def mean_nn_spacing(cloud) -> float:
    """Mean distance from each point to its nearest other point."""
    pts = ensure_cloud(cloud)
    if pts.shape[0] < 2:
        return 0.0
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.mean(d[:, 1]))
