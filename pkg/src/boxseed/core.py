"""Domain types shared by every stage of the pipeline.

All types are frozen dataclasses validated at construction time, so a
loaded dataset can be shared read-only across threads without further
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class NonPositiveDimsError(ValueError):
    """A box dimension is zero, negative, or non-finite."""


class UnknownVehicleTypeError(ValueError):
    """A vehicle-type string is not one of the recognized categories."""


class InvalidYearRangeError(ValueError):
    """A generation year range is malformed or out of bounds."""


@dataclass(frozen=True)
class Dimensions:
    """Vehicle box extents in meters.

    ``length_m >= width_m`` is deliberately not enforced; trailers and other
    unusual vehicles legitimately violate it. Positivity and finiteness are
    the only invariants.
    """

    length_m: float
    width_m: float
    height_m: float

    def __post_init__(self) -> None:
        for name in ("length_m", "width_m", "height_m"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise NonPositiveDimsError(f"{name} must be a number, got {value!r}")
            if not (math.isfinite(value) and value > 0):
                raise NonPositiveDimsError(f"{name} must be positive and finite, got {value!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.length_m, self.width_m, self.height_m)


class VehicleType(Enum):
    """The five main vehicle categories plus a catch-all ``other``."""

    SEDAN = "sedan"
    SUV = "suv"
    PICKUP_TRUCK = "pickup_truck"
    VAN = "van"
    HATCHBACK = "hatchback"
    OTHER = "other"


MAIN_VEHICLE_TYPES: tuple[VehicleType, ...] = (
    VehicleType.SEDAN,
    VehicleType.SUV,
    VehicleType.PICKUP_TRUCK,
    VehicleType.VAN,
    VehicleType.HATCHBACK,
)

_VEHICLE_TYPE_ALIASES = {
    "sedan": VehicleType.SEDAN,
    "suv": VehicleType.SUV,
    "pickup truck": VehicleType.PICKUP_TRUCK,
    "pickup": VehicleType.PICKUP_TRUCK,
    "van": VehicleType.VAN,
    "hatchback": VehicleType.HATCHBACK,
    "other": VehicleType.OTHER,
}


def parse_vehicle_type(value: str) -> VehicleType:
    """Parse a vehicle-type string; any string outside the known set fails.

    Accepts the canonical enum values plus the spellings used in prompt
    templates ("SUV", "pickup truck"), case-insensitively.
    """
    if not isinstance(value, str):
        raise UnknownVehicleTypeError(f"vehicle type must be a string, got {value!r}")
    key = " ".join(value.strip().lower().replace("-", " ").replace("_", " ").split())
    try:
        return _VEHICLE_TYPE_ALIASES[key]
    except KeyError:
        raise UnknownVehicleTypeError(f"unknown vehicle type {value!r}") from None


@dataclass(frozen=True)
class YearRange:
    """Production-year range of one vehicle generation, inclusive on both ends."""

    start_year: int
    end_year: int

    def __post_init__(self) -> None:
        for name in ("start_year", "end_year"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise InvalidYearRangeError(f"{name} must be an integer, got {value!r}")
            if not 1900 <= value <= 2100:
                raise InvalidYearRangeError(f"{name} must be in [1900, 2100], got {value}")
        if self.start_year > self.end_year:
            raise InvalidYearRangeError(
                f"start_year {self.start_year} exceeds end_year {self.end_year}"
            )

    def overlaps(self, other: "YearRange") -> bool:
        return max(self.start_year, other.start_year) <= min(self.end_year, other.end_year)

    def __str__(self) -> str:
        return f"{self.start_year}-{self.end_year}"


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole camera intrinsics plus the vehicle-frame to camera-frame pose.

    ``rotation`` is the 3x3 rotation stored row-major as 9 floats and
    ``translation`` the 3-vector in meters, mapping vehicle-frame points x to
    camera-frame points ``R @ x + t``. Zero skew, no lens distortion: images
    must be pre-rectified by the manifest producer.
    """

    camera_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple[float, ...]
    translation: tuple[float, float, float]
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        if not self.camera_id:
            raise ValueError("camera_id must be non-empty")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.image_width > 0 and self.image_height > 0):
            raise ValueError(
                f"image size must be positive, got {self.image_width}x{self.image_height}"
            )
        if len(self.rotation) != 9:
            raise ValueError(f"rotation must have 9 entries, got {len(self.rotation)}")
        if len(self.translation) != 3:
            raise ValueError(f"translation must have 3 entries, got {len(self.translation)}")
        if not all(math.isfinite(v) for v in (*self.rotation, *self.translation)):
            raise ValueError("rotation/translation entries must be finite")
        _check_orthonormal(self.rotation)

    def rotation_matrix(self):
        import numpy as np

        return np.array(self.rotation, dtype=float).reshape(3, 3)

    def translation_vector(self):
        import numpy as np

        return np.array(self.translation, dtype=float)

    def intrinsic_matrix(self):
        import numpy as np

        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=float
        )


_ORTHONORMALITY_TOL = 1e-6


def _check_orthonormal(rotation: tuple[float, ...]) -> None:
    # R @ R^T == I and det R == +1 within 1e-6, checked without numpy so core
    # stays import-light. det +1 rules out reflections, which satisfy the
    # orthonormality identity but mirror the image.
    rows = [rotation[0:3], rotation[3:6], rotation[6:9]]
    for i in range(3):
        for j in range(3):
            dot = sum(rows[i][k] * rows[j][k] for k in range(3))
            expected = 1.0 if i == j else 0.0
            if abs(dot - expected) > _ORTHONORMALITY_TOL:
                raise ValueError(
                    f"rotation is not orthonormal within {_ORTHONORMALITY_TOL:g} "
                    f"(row {i} . row {j} = {dot!r})"
                )
    r0, r1, r2 = rows
    cross = (
        r1[1] * r2[2] - r1[2] * r2[1],
        r1[2] * r2[0] - r1[0] * r2[2],
        r1[0] * r2[1] - r1[1] * r2[0],
    )
    det = sum(a * b for a, b in zip(r0, cross))
    if abs(det - 1.0) > _ORTHONORMALITY_TOL:
        raise ValueError(f"rotation must be proper (det +1), got det = {det!r}")


@dataclass(frozen=True)
class Observation:
    """One detection of the tracked vehicle in one camera at one timestamp."""

    timestamp: float
    camera_id: str
    center: tuple[float, float, float]
    dims: Dimensions
    heading: float
    crop_ref: str

    def __post_init__(self) -> None:
        if len(self.center) != 3 or not all(math.isfinite(v) for v in self.center):
            raise ValueError(f"center must be 3 finite values, got {self.center!r}")
        if not math.isfinite(self.timestamp):
            raise ValueError(f"timestamp must be finite, got {self.timestamp!r}")
        if not (-math.pi <= self.heading < math.pi):
            raise ValueError(f"heading must be in [-pi, pi), got {self.heading!r}")
        if not self.camera_id:
            raise ValueError("camera_id must be non-empty")


@dataclass(frozen=True)
class GroundTruthLabel:
    """Human-annotated truth for one track; identity fields are optional."""

    dimensions: Dimensions
    vehicle_type: VehicleType
    make: str | None = None
    model: str | None = None
    generation_range: YearRange | None = None
    modified_truth: bool | None = None


@dataclass(frozen=True)
class VehicleTrack:
    """One tracked vehicle: its observations over time plus optional truth.

    ``min_range_m`` is the track's closest approach to the ego vehicle,
    precomputed by the data producer; it drives the evaluation range filter.
    """

    track_id: str
    observations: tuple[Observation, ...]
    label: GroundTruthLabel | None
    min_range_m: float

    def __post_init__(self) -> None:
        if not self.track_id:
            raise ValueError("track_id must be non-empty")
        if len(self.observations) == 0:
            raise ValueError(f"track {self.track_id!r} has no observations")
        timestamps = [o.timestamp for o in self.observations]
        if any(b < a for a, b in zip(timestamps, timestamps[1:])):
            raise ValueError(f"track {self.track_id!r} timestamps are not non-decreasing")
        if not (math.isfinite(self.min_range_m) and self.min_range_m >= 0):
            raise ValueError(f"min_range_m must be finite and >= 0, got {self.min_range_m!r}")


def filter_by_range(tracks: list[VehicleTrack], max_range_m: float) -> list[VehicleTrack]:
    """Keep tracks whose closest approach is within ``max_range_m`` (inclusive).

    Order is preserved; an empty result is legal.
    """
    if not (isinstance(max_range_m, (int, float)) and max_range_m > 0):
        raise ValueError(f"max_range_m must be positive, got {max_range_m!r}")
    return [t for t in tracks if t.min_range_m <= max_range_m]
