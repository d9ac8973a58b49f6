"""Inference artifact files: canonical JSONL round-trips and resume support."""

import json

import pytest

from boxseed.artifacts import (
    InferenceRecord,
    append_records,
    existing_track_ids,
    read_records,
    record_from_json,
    record_to_json,
    sorted_records,
)
from boxseed.core import Dimensions, VehicleType, YearRange
from boxseed.parsing import (
    Abstention,
    AbstentionReason,
    Modification,
    ParseFailure,
    Prediction,
    VlmResponse,
)


def full_prediction():
    return Prediction(
        VlmResponse(
            make="Ford",
            model="F-150",
            generation_year_range=YearRange(2009, 2014),
            vehicle_type=VehicleType.PICKUP_TRUCK,
            configuration="SuperCrew",
            dims=Dimensions(5.89, 2.03, 1.92),
            length_modification=Modification.INCREASED,
        )
    )


def sample_records():
    return [
        InferenceRecord(
            track_id="t01",
            variant="refined_vmmgr",
            backend="replay",
            model="replay-fixture",
            outcome=full_prediction(),
            attempt_count=2,
            from_cache=True,
            n_images=3,
        ),
        InferenceRecord(
            track_id="t02",
            variant="refined_vmmgr",
            backend="replay",
            model="replay-fixture",
            outcome=Abstention(AbstentionReason.OCCLUDED),
        ),
        InferenceRecord(
            track_id="t03",
            variant="basic",
            backend="http",
            model="some-model",
            outcome=ParseFailure("no JSON object found in: 'hmm'"),
            n_images=5,
        ),
    ]


class TestRecordJson:
    @pytest.mark.parametrize("record", sample_records(), ids=lambda r: r.track_id)
    def test_round_trip(self, record):
        assert record_from_json(record_to_json(record)) == record

    def test_canonical_bytes(self):
        record = sample_records()[0]
        line = record_to_json(record)
        assert line == record_to_json(record)
        data = json.loads(line)
        assert list(data) == sorted(data)
        assert ": " not in line and ", " not in line  # compact separators

    def test_no_latency_stored(self):
        line = record_to_json(sample_records()[0])
        assert "latency" not in line

    def test_defaults_tolerated_on_read(self):
        line = json.dumps(
            {
                "track_id": "t09",
                "variant": "basic",
                "backend": "replay",
                "model": "m",
                "outcome": {"kind": "abstention", "reason": "null_dims"},
            }
        )
        record = record_from_json(line)
        assert record.attempt_count == 1
        assert record.from_cache is False
        assert record.n_images == 0


class TestArtifactFiles:
    def test_append_and_read(self, tmp_path):
        path = tmp_path / "runs" / "artifact.jsonl"
        records = sample_records()
        assert append_records(path, records[:2]) == 2
        assert append_records(path, records[2:]) == 1
        assert read_records(path) == records

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "artifact.jsonl"
        records = sample_records()
        path.write_text(
            record_to_json(records[0]) + "\n\n" + record_to_json(records[1]) + "\n",
            encoding="utf-8",
        )
        assert read_records(path) == records[:2]

    def test_corrupt_line_reported_with_context(self, tmp_path):
        path = tmp_path / "artifact.jsonl"
        path.write_text(
            record_to_json(sample_records()[0]) + "\n{not json\n", encoding="utf-8"
        )
        with pytest.raises(ValueError, match=r"artifact\.jsonl:2"):
            read_records(path)

    def test_unknown_outcome_kind_reported(self, tmp_path):
        path = tmp_path / "artifact.jsonl"
        line = record_to_json(sample_records()[1]).replace("abstention", "mystery")
        path.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":1"):
            read_records(path)

    def test_existing_track_ids(self, tmp_path):
        path = tmp_path / "artifact.jsonl"
        assert existing_track_ids(path) == set()
        append_records(path, sample_records())
        assert existing_track_ids(path) == {"t01", "t02", "t03"}

    def test_identical_runs_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        append_records(a, sample_records())
        append_records(b, sample_records())
        assert a.read_bytes() == b.read_bytes()


class TestSorting:
    def test_sorted_by_track_then_variant(self):
        base = sample_records()[0]
        records = [
            InferenceRecord("t02", "basic", "replay", "m", Abstention(AbstentionReason.OCCLUDED)),
            base,
            InferenceRecord("t01", "basic", "replay", "m", Abstention(AbstentionReason.OCCLUDED)),
        ]
        ordered = sorted_records(records)
        assert [(r.track_id, r.variant) for r in ordered] == [
            ("t01", "basic"),
            ("t01", "refined_vmmgr"),
            ("t02", "basic"),
        ]
