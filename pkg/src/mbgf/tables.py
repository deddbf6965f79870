"""Deterministic CSV and JSON output with a provenance header."""

from __future__ import annotations

import hashlib
import json
import math

from . import __version__

__all__ = ["SCHEMA", "fmt", "input_checksum", "render_csv", "render_json", "write_output"]

SCHEMA = 1


def fmt(x) -> str:
    """Twelve significant digits; integers and strings pass through."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".12g")
    return str(x)


def input_checksum(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _header(config: dict, checksum: str):
    return [
        f"mbgf {__version__}",
        "config: " + json.dumps(config, sort_keys=True),
        f"input-sha256: {checksum}",
    ]


def render_csv(columns, rows, config: dict, checksum: str) -> str:
    lines = ["# " + h for h in _header(config, checksum)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def render_json(payload: dict, config: dict, checksum: str) -> str:
    doc = {
        "schema": SCHEMA,
        "tool": "mbgf",
        "version": __version__,
        "config": config,
        "input_sha256": checksum,
    }
    doc.update(payload)
    return json.dumps(_clean(doc), sort_keys=True, indent=1) + "\n"


def write_output(text: str, path=None, stream=None):
    if path is None or path == "-":
        stream.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
