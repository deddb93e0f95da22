"""Row-oriented output files: RFC-4180 CSV or JSON arrays of row objects.

Floats are written with 17 significant digits so every 64-bit value
round-trips exactly; identical rows therefore produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

__all__ = ["format_value", "write_rows", "read_rows"]


def format_value(value: Any) -> Any:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return value


def write_rows(
    path: str | Path,
    rows: Iterable[dict[str, Any]],
    fmt: str = "csv",
    fieldnames: Sequence[str] | None = None,
) -> Path:
    """Write rows to ``path`` in the requested format; returns the path.

    Column order follows ``fieldnames`` when given, else the first row's
    key order.  A header row is always present in CSV output.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: format_value(v) for k, v in row.items()})
    elif fmt == "json":
        with path.open("w") as fh:
            json.dump(rows, fh, indent=2, allow_nan=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_rows(path: str | Path) -> list[dict[str, Any]]:
    """Read rows back; CSV values come back as strings, JSON as typed."""
    path = Path(path)
    if path.suffix == ".json":
        with path.open() as fh:
            return json.load(fh)
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))
