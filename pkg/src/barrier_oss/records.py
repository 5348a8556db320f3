"""Versioned CSV / JSON-lines output records and their reader.

Column order and field names come from ``schema.json``. Every row starts with
``schema_version`` and ``record``. Wall-clock columns (``elapsed``,
``runtime``) are written only when timing is requested, so repeated runs with
the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError

__all__ = ["SCHEMA", "SCHEMA_VERSION", "columns", "format_records", "write_records", "read_records"]

SCHEMA = json.loads(resources.files(__package__).joinpath("schema.json").read_text())
SCHEMA_VERSION = SCHEMA["schema_version"]
_OPTIONAL = set(SCHEMA["optional"])


def columns(record: str, timing: bool = False) -> list[str]:
    try:
        fields = SCHEMA["records"][record]
    except KeyError:
        raise ConfigurationError(f"unknown record type {record!r}") from None
    names = [name for name in fields if timing or name not in _OPTIONAL]
    return ["schema_version", "record", *names]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else repr(value)
    return value


def format_records(record: str, rows: list[dict], fmt: str = "csv", timing: bool = False) -> str:
    cols = columns(record, timing)
    full = [{"schema_version": SCHEMA_VERSION, "record": record, **row} for row in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in full:
            writer.writerow([_cell(row.get(c)) for c in cols])
        return buf.getvalue()
    if fmt == "json":
        lines = [json.dumps({c: _json_value(row.get(c)) for c in cols}, allow_nan=False) for row in full]
        return "".join(line + "\n" for line in lines)
    raise ConfigurationError(f"unknown output format {fmt!r}")


def write_records(path, record: str, rows: list[dict], fmt: str = "csv", timing: bool = False) -> None:
    text = format_records(record, rows, fmt, timing)
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def _parse(kind: str, raw):
    if raw is None or raw == "":
        return None
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        return raw if isinstance(raw, bool) else raw == "true"
    return str(raw)


def _typed(row: dict) -> dict:
    record = row.get("record")
    fields = SCHEMA["records"].get(record)
    if fields is None:
        raise ConfigurationError(f"unknown record type {record!r}")
    out = {"schema_version": int(row["schema_version"]), "record": record}
    for name, kind in fields.items():
        if name in row:
            out[name] = _parse(kind, row[name])
    if out["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema version {out['schema_version']}")
    return out


def read_records(path) -> list[dict]:
    """Parse a CSV or JSON-lines file written by :func:`write_records`."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return [_typed(json.loads(line)) for line in text.splitlines() if line.strip()]
    return [_typed(row) for row in csv.DictReader(io.StringIO(text))]
