"""Record serialization and configuration files for the command line.

CSV cells carry 17 significant digits so every double survives a
round trip; JSON documents pair a ``metadata`` object with a ``data``
array.  Both writers drop wall-clock fields and sort JSON keys, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import numbers
from collections.abc import Mapping, Sequence

__all__ = [
    "format_cell",
    "format_csv",
    "format_json",
    "strip_volatile",
    "write_text",
    "load_config",
    "merge_config",
    "dump_config",
]

# Metadata entries that vary between identical runs and must not reach
# serialized output.
_VOLATILE_METADATA = ("runtime_seconds",)


def format_cell(value) -> str:
    """One CSV cell; floats keep 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return format(float(value), ".17g")
    if isinstance(value, str):
        if any(ch in value for ch in (",", '"', "\n")):
            return '"' + value.replace('"', '""') + '"'
        return value
    raise ValueError(
        f"value of type {type(value).__name__} is not a CSV scalar; "
        "use the json format for nested records"
    )


def _column_union(records: Sequence[Mapping]) -> list[str]:
    columns: list[str] = []
    seen = set()
    for record in records:
        for key in record:
            if key not in seen:
                seen.add(key)
                columns.append(key)
    return columns


def format_csv(records: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    """Header plus one line per record, LF separated.

    Column order is the explicit ``columns`` argument or first-seen
    order across the records; keys missing from a record leave an
    empty cell.
    """
    if columns is None:
        columns = _column_union(records)
    columns = list(columns)
    lines = [",".join(columns)]
    for record in records:
        cells = []
        for name in columns:
            try:
                cells.append(format_cell(record.get(name)))
            except ValueError as exc:
                raise ValueError(f"column {name!r}: {exc}") from None
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _json_fallback(value):
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        return float(value)
    if isinstance(value, Sequence) and not isinstance(value, str):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__} to JSON")


def strip_volatile(metadata: Mapping) -> dict:
    return {k: v for k, v in metadata.items() if k not in _VOLATILE_METADATA}


def format_json(metadata: Mapping, records: Sequence[Mapping]) -> str:
    document = {"metadata": strip_volatile(metadata), "data": list(records)}
    return (
        json.dumps(document, indent=2, sort_keys=True, default=_json_fallback)
        + "\n"
    )


def write_text(path: str, text: str) -> None:
    """UTF-8 with LF endings regardless of platform."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            config = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path}: not valid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise ValueError(f"config {path}: top level must be an object")
    return config


def merge_config(defaults: Mapping, *layers: Mapping) -> dict:
    """Later layers win; None values never override."""
    merged = dict(defaults)
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged


def dump_config(config: Mapping) -> str:
    return json.dumps(dict(config), indent=2, sort_keys=True) + "\n"
