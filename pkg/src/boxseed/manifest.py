"""JSONL dataset manifest: loading and total validation.

Manifest format (UTF-8 JSON Lines, calibration lines first):

    {"kind": "calibration", "camera_id": "cam_front", "fx": 1000.0, "fy": 1000.0,
     "cx": 960.0, "cy": 640.0, "rotation": [... 9 floats row-major ...],
     "translation": [tx, ty, tz], "image_width": 1920, "image_height": 1280}

    {"kind": "track", "track_id": "t001", "min_range_m": 12.5, "label": {...} | null,
     "observations": [{"timestamp": 0.0, "camera_id": "cam_front",
                       "center": [x, y, z], "dims": [l, w, h], "heading": 0.0,
                       "crop": "crops/t001_000.jpg"}, ...]}

Label objects carry ``dims`` ([l, w, h]), ``vehicle_type``, and optional
``make``, ``model``, ``generation`` ("YYYY-YYYY" or [start, end]) and
``modified`` fields.

Validation is total: either every record is accepted, or a ``ManifestError``
carrying one issue per offending record is raised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    CameraCalibration,
    Dimensions,
    GroundTruthLabel,
    Observation,
    VehicleTrack,
    YearRange,
    parse_vehicle_type,
)

MALFORMED_LINE = "malformed_line"
UNKNOWN_CAMERA = "unknown_camera"
NON_MONOTONE_TIMESTAMPS = "non_monotone_timestamps"
EMPTY_TRACK = "empty_track"


@dataclass(frozen=True)
class ManifestIssue:
    """One validation problem, tagged with its kind and location."""

    kind: str
    line_no: int
    track_id: str | None = None
    camera_id: str | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = f"line {self.line_no}"
        if self.track_id:
            where += f", track {self.track_id!r}"
        if self.camera_id:
            where += f", camera {self.camera_id!r}"
        msg = f"{self.kind} ({where})"
        return f"{msg}: {self.detail}" if self.detail else msg


class ManifestError(Exception):
    """Aggregate of every validation issue found in one manifest."""

    def __init__(self, issues: list[ManifestIssue]):
        self.issues = issues
        preview = "; ".join(str(i) for i in issues[:5])
        more = f" (+{len(issues) - 5} more)" if len(issues) > 5 else ""
        super().__init__(f"{len(issues)} manifest issue(s): {preview}{more}")


@dataclass
class _LoaderState:
    calibrations: dict[str, CameraCalibration] = field(default_factory=dict)
    tracks: dict[str, VehicleTrack] = field(default_factory=dict)
    issues: list[ManifestIssue] = field(default_factory=list)
    saw_track: bool = False


def load_manifest(path: str | Path) -> tuple[dict[str, CameraCalibration], list[VehicleTrack]]:
    """Load a manifest file into calibrations (keyed by camera_id) and tracks.

    Tracks are returned sorted by ``track_id``. Raises ``FileNotFoundError``
    if the file is missing and ``ManifestError`` with the full issue list if
    any record fails validation.
    """
    path = Path(path)
    state = _LoaderState()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            _load_line(state, line_no, line)
    if state.issues:
        raise ManifestError(state.issues)
    return state.calibrations, sorted(state.tracks.values(), key=lambda t: t.track_id)


def _load_line(state: _LoaderState, line_no: int, line: str) -> None:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        state.issues.append(ManifestIssue(MALFORMED_LINE, line_no, detail=f"invalid JSON: {e}"))
        return
    if not isinstance(record, dict):
        state.issues.append(ManifestIssue(MALFORMED_LINE, line_no, detail="record is not an object"))
        return
    kind = record.get("kind")
    if kind == "calibration":
        _load_calibration(state, line_no, record)
    elif kind == "track":
        state.saw_track = True
        _load_track(state, line_no, record)
    else:
        state.issues.append(
            ManifestIssue(MALFORMED_LINE, line_no, detail=f"unknown record kind {kind!r}")
        )


def _load_calibration(state: _LoaderState, line_no: int, record: dict) -> None:
    if state.saw_track:
        state.issues.append(
            ManifestIssue(
                MALFORMED_LINE, line_no, detail="calibration lines must precede track lines"
            )
        )
        return
    try:
        calibration = CameraCalibration(
            camera_id=record["camera_id"],
            fx=float(record["fx"]),
            fy=float(record["fy"]),
            cx=float(record["cx"]),
            cy=float(record["cy"]),
            rotation=tuple(float(v) for v in record["rotation"]),
            translation=tuple(float(v) for v in record["translation"]),
            image_width=int(record["image_width"]),
            image_height=int(record["image_height"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        state.issues.append(
            ManifestIssue(MALFORMED_LINE, line_no, detail=f"bad calibration: {e!r}")
        )
        return
    if calibration.camera_id in state.calibrations:
        state.issues.append(
            ManifestIssue(
                MALFORMED_LINE,
                line_no,
                camera_id=calibration.camera_id,
                detail="duplicate camera_id",
            )
        )
        return
    state.calibrations[calibration.camera_id] = calibration


def _load_track(state: _LoaderState, line_no: int, record: dict) -> None:
    track_id = record.get("track_id")
    if not isinstance(track_id, str) or not track_id:
        state.issues.append(
            ManifestIssue(MALFORMED_LINE, line_no, detail="track_id missing or not a string")
        )
        return
    if track_id in state.tracks:
        state.issues.append(
            ManifestIssue(MALFORMED_LINE, line_no, track_id=track_id, detail="duplicate track_id")
        )
        return

    raw_observations = record.get("observations")
    if not isinstance(raw_observations, list):
        state.issues.append(
            ManifestIssue(
                MALFORMED_LINE, line_no, track_id=track_id, detail="observations must be a list"
            )
        )
        return
    if len(raw_observations) == 0:
        state.issues.append(ManifestIssue(EMPTY_TRACK, line_no, track_id=track_id))
        return

    observations = []
    unknown_cameras: list[str] = []
    for obs in raw_observations:
        try:
            parsed = Observation(
                timestamp=float(obs["timestamp"]),
                camera_id=obs["camera_id"],
                center=tuple(float(v) for v in obs["center"]),
                dims=Dimensions(*(float(v) for v in obs["dims"])),
                heading=float(obs["heading"]),
                crop_ref=obs["crop"],
            )
        except (KeyError, TypeError, ValueError) as e:
            state.issues.append(
                ManifestIssue(
                    MALFORMED_LINE, line_no, track_id=track_id, detail=f"bad observation: {e!r}"
                )
            )
            return
        if parsed.camera_id not in state.calibrations:
            if parsed.camera_id not in unknown_cameras:
                unknown_cameras.append(parsed.camera_id)
            continue
        observations.append(parsed)
    if unknown_cameras:
        state.issues.extend(
            ManifestIssue(UNKNOWN_CAMERA, line_no, track_id=track_id, camera_id=cam)
            for cam in unknown_cameras
        )
        return

    timestamps = [o.timestamp for o in observations]
    if any(b < a for a, b in zip(timestamps, timestamps[1:])):
        state.issues.append(ManifestIssue(NON_MONOTONE_TIMESTAMPS, line_no, track_id=track_id))
        return

    try:
        label = _parse_label(record.get("label"))
        track = VehicleTrack(
            track_id=track_id,
            observations=tuple(observations),
            label=label,
            min_range_m=float(record["min_range_m"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        state.issues.append(
            ManifestIssue(MALFORMED_LINE, line_no, track_id=track_id, detail=f"bad track: {e!r}")
        )
        return
    state.tracks[track_id] = track


def _parse_label(raw: dict | None) -> GroundTruthLabel | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ValueError(f"label must be an object or null, got {raw!r}")
    generation = raw.get("generation")
    if generation is None:
        generation_range = None
    elif isinstance(generation, str):
        from .parsing import parse_year_range

        generation_range = parse_year_range(generation)
    else:
        start, end = generation
        generation_range = YearRange(int(start), int(end))
    return GroundTruthLabel(
        dimensions=Dimensions(*(float(v) for v in raw["dims"])),
        vehicle_type=parse_vehicle_type(raw["vehicle_type"]),
        make=raw.get("make"),
        model=raw.get("model"),
        generation_range=generation_range,
        modified_truth=raw.get("modified"),
    )
