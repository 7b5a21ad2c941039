"""Normalized pose features.

A pose is reduced to 16 numbers: for each of the 8 upper-body joints,
(x - x0) / |x_a - x_b| and (y - y0) / |y_c - y_d|, where (x0, y0) is the
intersection of the infinite line through reference joints (a, b) with the
line through (c, d).  The division by joint-pair extents makes the vector
invariant to translation and to positive per-axis scaling, so camera
distance and framing drop out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import UpperBodyJoints

# Reference joints by game numbering (1..8): neck, r_shoulder for the x axis,
# r_elbow, r_wrist for the y axis.
DEFAULT_REFERENCE_INDICES = (1, 2, 3, 4)

# Well below pixel measurement noise; used for both the line determinant and
# the normalization denominators.
DEGENERACY_EPS = 1e-9

FEATURE_DIM = 16


@dataclass(frozen=True)
class Degenerate:
    """Frame cannot be normalized (parallel reference lines or zero extent)."""

    reason: str


@dataclass(frozen=True)
class ReferencePoint:
    x: float
    y: float


@dataclass(frozen=True)
class NormalizedPose:
    """16 features, interleaved (x, y) per joint in game joint order."""

    features: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.shape != (FEATURE_DIM,):
            raise ValueError(f"expected {FEATURE_DIM} features, got shape {arr.shape}")
        object.__setattr__(self, "features", arr)


def intersect_lines(a1, a2, b1, b2) -> ReferencePoint | Degenerate:
    """Intersect the infinite line through a1,a2 with the line through b1,b2."""
    a1x, a1y = float(a1[0]), float(a1[1])
    d1x, d1y = float(a2[0]) - a1x, float(a2[1]) - a1y
    d2x, d2y = float(b2[0]) - float(b1[0]), float(b2[1]) - float(b1[1])
    det = d1x * d2y - d1y * d2x
    if abs(det) < DEGENERACY_EPS:
        return Degenerate("reference lines parallel or reference joints coincident")
    t = ((float(b1[0]) - a1x) * d2y - (float(b1[1]) - a1y) * d2x) / det
    return ReferencePoint(a1x + t * d1x, a1y + t * d1y)


def normalize(
    joints: UpperBodyJoints | np.ndarray,
    reference_indices: tuple[int, int, int, int] = DEFAULT_REFERENCE_INDICES,
) -> NormalizedPose | Degenerate:
    """Compute the 16-feature vector, or Degenerate when the frame is unusable.

    reference_indices are game joint numbers (1..8): the first pair spans the
    x denominator and one reference line, the second pair the y denominator
    and the other line.
    """
    pts = _as_points(joints)
    a, b, c, d = _validate_reference(reference_indices)

    ref = intersect_lines(pts[a], pts[b], pts[c], pts[d])
    if isinstance(ref, Degenerate):
        return ref
    dx = abs(pts[a, 0] - pts[b, 0])
    dy = abs(pts[c, 1] - pts[d, 1])
    if dx < DEGENERACY_EPS:
        return Degenerate("x reference extent below tolerance")
    if dy < DEGENERACY_EPS:
        return Degenerate("y reference extent below tolerance")

    features = np.empty(FEATURE_DIM, dtype=np.float64)
    features[0::2] = (pts[:, 0] - ref.x) / dx
    features[1::2] = (pts[:, 1] - ref.y) / dy
    if not np.all(np.isfinite(features)):
        return Degenerate("non-finite feature after normalization")
    return NormalizedPose(features)


def _as_points(joints: UpperBodyJoints | np.ndarray) -> np.ndarray:
    if isinstance(joints, UpperBodyJoints):
        pts = np.asarray(joints.positions, dtype=np.float64)
    else:
        pts = np.asarray(joints, dtype=np.float64)
    if pts.shape != (8, 2):
        raise ValueError(f"expected 8 (x, y) joints, got shape {pts.shape}")
    return pts


def _validate_reference(reference_indices) -> tuple[int, int, int, int]:
    if len(reference_indices) != 4:
        raise ValueError(f"need 4 reference joints, got {len(reference_indices)}")
    idx = tuple(int(i) for i in reference_indices)
    for i in idx:
        if not 1 <= i <= 8:
            raise ValueError(f"reference joint {i} outside 1..8")
    if idx[0] == idx[1] or idx[2] == idx[3]:
        raise ValueError(f"reference pairs must be distinct joints: {idx}")
    return idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[3] - 1
