"""Shared CSV loading and schema checks for the plotting scripts.

The scripts consume only the documented artifact schemas; a header mismatch
is reported column by column and nothing is written.
"""

from __future__ import annotations

import csv


class SchemaError(ValueError):
    pass


def load_rows(path: str, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in required if col not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing required columns {missing}; found {header}"
            )
        rows = []
        for raw in reader:
            rows.append({k: raw[k] for k in header})
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def floats(rows: list[dict], column: str) -> list[float]:
    try:
        return [float(r[column]) for r in rows]
    except ValueError as exc:
        raise SchemaError(f"column {column!r} holds a non-numeric entry: {exc}") from exc
