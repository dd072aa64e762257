"""Small shared helpers: canonical JSON, checksums, float formatting."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path


def canonical_json(obj) -> str:
    """Serialize to JSON with sorted keys and no whitespace drift (byte-stable)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_json(obj, path: Path) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(value) -> str:
    """Render a cell for CSV output; floats use repr (shortest round-trip)."""
    if isinstance(value, float):
        value = float(value)  # numpy scalars repr differently
        if not math.isfinite(value):
            return repr(value)
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)
