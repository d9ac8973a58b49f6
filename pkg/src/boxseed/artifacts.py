"""Inference artifacts: append-only JSONL, one parsed outcome per track.

Records are written in canonical form (sorted keys, compact separators) so
identical runs produce byte-identical files, which makes artifacts cheap to
diff across backends and reruns. Volatile values such as request latency are
deliberately not stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .parsing import ParsedOutcome, outcome_from_dict, outcome_to_dict


@dataclass(frozen=True)
class InferenceRecord:
    track_id: str
    variant: str
    backend: str
    model: str
    outcome: ParsedOutcome
    attempt_count: int = 1
    from_cache: bool = False
    n_images: int = 0


def record_to_json(record: InferenceRecord) -> str:
    payload = {
        "track_id": record.track_id,
        "variant": record.variant,
        "backend": record.backend,
        "model": record.model,
        "outcome": outcome_to_dict(record.outcome),
        "attempt_count": record.attempt_count,
        "from_cache": record.from_cache,
        "n_images": record.n_images,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def record_from_json(line: str) -> InferenceRecord:
    data = json.loads(line)
    return InferenceRecord(
        track_id=data["track_id"],
        variant=data["variant"],
        backend=data["backend"],
        model=data["model"],
        outcome=outcome_from_dict(data["outcome"]),
        attempt_count=int(data.get("attempt_count", 1)),
        from_cache=bool(data.get("from_cache", False)),
        n_images=int(data.get("n_images", 0)),
    )


def append_records(path: str | Path, records: Iterable[InferenceRecord]) -> int:
    """Append records to a JSONL artifact, creating it if needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")
            count += 1
    return count


def read_records(path: str | Path) -> list[InferenceRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad artifact line: {exc}") from exc
    return records


def existing_track_ids(path: str | Path) -> set[str]:
    """Track ids already present in an artifact; empty set if absent."""
    path = Path(path)
    if not path.exists():
        return set()
    return {record.track_id for record in read_records(path)}


def sort_key(record: InferenceRecord) -> tuple[str, str]:
    return (record.track_id, record.variant)


def sorted_records(records: Sequence[InferenceRecord]) -> list[InferenceRecord]:
    return sorted(records, key=sort_key)
