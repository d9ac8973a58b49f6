"""Best-view camera selection and uniform temporal subsampling.

Two-step frame selection: per timestamp, keep the camera where the vehicle's
projected pixel area is largest; then uniformly sample down to the model's
context budget over the surviving frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, TypeVar

from .core import CameraCalibration, VehicleTrack
from .geometry import projected_area


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling budget: the maximum number of context images per request."""

    n_images: int

    def __post_init__(self) -> None:
        if not isinstance(self.n_images, int) or isinstance(self.n_images, bool):
            raise ValueError(f"n_images must be an integer, got {self.n_images!r}")
        if self.n_images < 1:
            raise ValueError(f"n_images must be >= 1, got {self.n_images}")


@dataclass(frozen=True)
class BestViewFrame:
    """The winning camera view of the vehicle at one timestamp."""

    timestamp: float
    camera_id: str
    area_px: float
    crop_ref: str

    def __post_init__(self) -> None:
        if not self.area_px > 0:
            raise ValueError(f"area_px must be positive, got {self.area_px!r}")


def select_best_views(
    track: VehicleTrack, calibrations: Mapping[str, CameraCalibration]
) -> list[BestViewFrame]:
    """Pick, per distinct timestamp, the camera with the largest projected area.

    Timestamps where no camera sees the vehicle (every projected area is zero)
    are dropped entirely. Area ties break toward the lexicographically
    smallest camera_id so reruns are deterministic. Output is ordered by
    timestamp.
    """
    by_timestamp: dict[float, list] = {}
    for obs in track.observations:
        by_timestamp.setdefault(obs.timestamp, []).append(obs)

    frames: list[BestViewFrame] = []
    for timestamp in sorted(by_timestamp):
        best = None
        for obs in by_timestamp[timestamp]:
            calibration = calibrations[obs.camera_id]
            footprint = projected_area(obs.center, obs.dims, obs.heading, calibration)
            if footprint.area_px <= 0:
                continue
            key = (-footprint.area_px, obs.camera_id)
            if best is None or key < best[0]:
                best = (key, obs, footprint)
        if best is not None:
            _, obs, footprint = best
            frames.append(
                BestViewFrame(
                    timestamp=timestamp,
                    camera_id=obs.camera_id,
                    area_px=footprint.area_px,
                    crop_ref=obs.crop_ref,
                )
            )
    return frames


_T = TypeVar("_T")


def sample_uniform(frames: Sequence[_T], n: int) -> list[_T]:
    """Uniformly subsample ``frames`` down to at most ``n`` elements.

    With M = len(frames) > n >= 2, picks indices round(i * (M-1) / (n-1)) for
    i in 0..n-1 under round-half-up, so the first and last frames are always
    included. For n == 1 the first frame is kept. The output is always an
    in-order subsequence of the input.
    """
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"n must be an integer >= 1, got {n!r}")
    m = len(frames)
    if m <= n:
        return list(frames)
    if n == 1:
        return [frames[0]]
    step = (m - 1) / (n - 1)
    indices = []
    for i in range(n):
        index = math.floor(i * step + 0.5)  # round-half-up
        if not indices or index != indices[-1]:
            indices.append(index)
    return [frames[i] for i in indices]
