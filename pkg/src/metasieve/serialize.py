"""Canonical JSON serialization and timestamp-insensitive digests.

Every artifact the package writes goes through :func:`canonical_dumps` so that
two runs over identical inputs produce byte-identical files.  Digests used for
replay-fixture keys and determinism checks strip timestamp fields first, since
those are the only fields allowed to differ between runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any

# Fields that may legitimately differ between two otherwise identical runs.
TIMESTAMP_FIELDS = frozenset({"ingested_at", "timestamp", "retrieved_at", "recorded_at"})


def to_jsonable(obj: Any) -> Any:
    """Recursively convert dataclasses, enums and paths into plain JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_dumps(obj: Any, indent: int | None = None) -> str:
    """Serialize with sorted keys and fixed separators for stable bytes."""
    separators = (",", ": ") if indent else (",", ":")
    return json.dumps(
        to_jsonable(obj), sort_keys=True, separators=separators, indent=indent, ensure_ascii=False
    )


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(canonical_dumps(obj, indent=2) + "\n", encoding="utf-8")


def strip_timestamps(obj: Any) -> Any:
    """Drop timestamp-valued keys recursively; used before digesting artifacts."""
    if isinstance(obj, dict):
        return {k: strip_timestamps(v) for k, v in obj.items() if k not in TIMESTAMP_FIELDS}
    if isinstance(obj, list):
        return [strip_timestamps(v) for v in obj]
    return obj


def artifact_digest(obj: Any) -> str:
    """SHA-256 over the canonical form with timestamps removed."""
    payload = strip_timestamps(to_jsonable(obj))
    return hashlib.sha256(canonical_dumps(payload).encode("utf-8")).hexdigest()


def stable_hash(*parts: str) -> str:
    """SHA-256 over a tuple of strings; the replay/fixture keying primitive."""
    return hashlib.sha256(canonical_dumps(list(parts)).encode("utf-8")).hexdigest()
