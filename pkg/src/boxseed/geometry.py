"""Pinhole projection of 3D vehicle boxes and overhead-view IoU.

All functions are pure. Boxes are parameterized by center (vehicle frame,
meters), extents (length along x at zero heading, width along y, height
along z) and a yaw-only heading about the vertical axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CameraCalibration, Dimensions, NonPositiveDimsError

# Corners closer than this to the image plane are discarded rather than
# clipped along edges; only relative areas drive camera selection.
NEAR_PLANE_M = 0.1

# Fixed corner order: sign pattern (sx, sy, sz) over (length, width, height).
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, +1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, -1, -1],
        [+1, -1, +1],
        [+1, +1, -1],
        [+1, +1, +1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class ProjectedFootprint:
    """Pixel-space footprint of a 3D box in one camera.

    ``pixel_bbox`` is (u_min, v_min, u_max, v_max) clipped to the image;
    ``area_px`` is the clipped bbox area and is 0 when no corner is in front
    of the camera.
    """

    camera_id: str
    visible_corner_count: int
    pixel_bbox: tuple[float, float, float, float]
    area_px: float


def _dims_tuple(dims: Dimensions | Sequence[float]) -> tuple[float, float, float]:
    if isinstance(dims, Dimensions):
        return dims.as_tuple()
    values = tuple(float(v) for v in dims)
    if len(values) != 3:
        raise NonPositiveDimsError(f"dims must have 3 entries, got {len(values)}")
    if not all(math.isfinite(v) and v > 0 for v in values):
        raise NonPositiveDimsError(f"dims must be positive and finite, got {values}")
    return values


def box_corners(
    center: Sequence[float],
    dims: Dimensions | Sequence[float],
    heading: float,
) -> np.ndarray:
    """Return the 8 box corners in the vehicle frame as an (8, 3) array.

    Corners are the center plus yaw-rotated half-extents; the corner order is
    fixed (documented on ``_CORNER_SIGNS``) so downstream code is
    deterministic.
    """
    length, width, height = _dims_tuple(dims)
    cx, cy, cz = (float(v) for v in center)
    half = _CORNER_SIGNS * np.array([length / 2.0, width / 2.0, height / 2.0])
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    rotated = np.empty_like(half)
    rotated[:, 0] = cos_h * half[:, 0] - sin_h * half[:, 1]
    rotated[:, 1] = sin_h * half[:, 0] + cos_h * half[:, 1]
    rotated[:, 2] = half[:, 2]
    return rotated + np.array([cx, cy, cz])


def projected_area(
    center: Sequence[float],
    dims: Dimensions | Sequence[float],
    heading: float,
    calibration: CameraCalibration,
) -> ProjectedFootprint:
    """Project a box into one camera and measure its pixel bounding box.

    Corners are moved to the camera frame, corners at depth <= ``NEAR_PLANE_M``
    are dropped, the survivors are projected through the pinhole model, and
    the axis-aligned bounds of the projections are intersected with the image
    rectangle. A box fully behind the camera yields ``area_px == 0`` rather
    than an error.
    """
    corners = box_corners(center, dims, heading)
    rotation = calibration.rotation_matrix()
    translation = calibration.translation_vector()
    cam = corners @ rotation.T + translation
    depths = cam[:, 2]
    in_front = depths > NEAR_PLANE_M
    visible = int(np.count_nonzero(in_front))
    if visible == 0:
        return ProjectedFootprint(calibration.camera_id, 0, (0.0, 0.0, 0.0, 0.0), 0.0)

    pts = cam[in_front]
    u = calibration.fx * pts[:, 0] / pts[:, 2] + calibration.cx
    v = calibration.fy * pts[:, 1] / pts[:, 2] + calibration.cy
    u_min = _clip(float(np.min(u)), calibration.image_width)
    u_max = _clip(float(np.max(u)), calibration.image_width)
    v_min = _clip(float(np.min(v)), calibration.image_height)
    v_max = _clip(float(np.max(v)), calibration.image_height)
    area = max(0.0, u_max - u_min) * max(0.0, v_max - v_min)
    return ProjectedFootprint(
        calibration.camera_id, visible, (u_min, v_min, u_max, v_max), area
    )


def _clip(value: float, upper: float) -> float:
    return min(max(value, 0.0), float(upper))


def bev_iou_centered(
    a: Dimensions | Sequence[float], b: Dimensions | Sequence[float]
) -> float:
    """IoU of two co-centered, axis-aligned overhead rectangles.

    Because the detection pose is shared by prediction and label, IoU in the
    overhead view reduces to a pure function of the (length, width) pairs:
    intersection is ``min(la, lb) * min(wa, wb)``. Height is ignored.
    """
    la, wa, _ = _dims_tuple(a)
    lb, wb, _ = _dims_tuple(b)
    intersection = min(la, lb) * min(wa, wb)
    union = la * wa + lb * wb - intersection
    return intersection / union
