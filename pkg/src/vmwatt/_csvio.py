"""Small strict CSV helpers used by every on-disk format.

Rows are plain comma-separated decimals with a fixed header. Lines starting
with ``#`` are annotations: ``# flag=<reason>`` marks the data row that
immediately follows it. Anything else that fails to parse raises
:class:`~vmwatt.errors.ParseError` with the file and line number.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import IO, Iterator, Sequence

from .errors import ParseError

FLAG_PREFIX = "# flag="


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def write_header(fh: IO[str], header: Sequence[str]) -> None:
    fh.write(",".join(header) + "\n")


def write_row(fh: IO[str], values: Sequence[float], flag: str | None = None) -> None:
    if flag:
        fh.write(f"{FLAG_PREFIX}{flag}\n")
    fh.write(",".join(format_number(v) for v in values) + "\n")


def parse_float(text: str, path, lineno: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"column {column!r}: non-finite value {text!r}")
    return value


def iter_rows(
    path: str | Path,
    header: Sequence[str],
    *,
    allow_extra_columns: bool = False,
) -> Iterator[tuple[int, dict[str, str], str | None]]:
    """Yield ``(line_number, {column: text}, flag)`` for each data row.

    With ``allow_extra_columns`` the header only needs to contain ``header``
    as a subset; otherwise it must match exactly.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        columns = None
        pending_flag = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if columns is None:
                if not line:
                    raise ParseError(path, lineno, "empty file (missing header)")
                columns = [c.strip() for c in line.split(",")]
                if allow_extra_columns:
                    missing = [c for c in header if c not in columns]
                    if missing:
                        raise ParseError(path, lineno, f"header lacks columns {missing}")
                elif columns != list(header):
                    raise ParseError(
                        path, lineno, f"expected header {','.join(header)!r}, got {line!r}"
                    )
                continue
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith(FLAG_PREFIX):
                    pending_flag = line[len(FLAG_PREFIX):].strip() or "flagged"
                continue
            fields = line.split(",")
            if len(fields) != len(columns):
                raise ParseError(
                    path, lineno, f"expected {len(columns)} fields, got {len(fields)}"
                )
            yield lineno, dict(zip(columns, (f.strip() for f in fields))), pending_flag
            pending_flag = None
        if columns is None:
            raise ParseError(path, 1, "empty file (missing header)")
