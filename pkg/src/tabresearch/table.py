"""In-memory grid model with merged cells, typed values and ingestion.

Two neutral input formats are supported: a JSON grid document that can carry
merged spans and an emphasis bit, and plain delimiter-separated text.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .errors import (
    EmptyDocument,
    MalformedDocument,
    OutOfBounds,
    OverlappingSpans,
    UnreadableEncoding,
)

NULL = "null"
BOOL = "bool"
INTEGER = "integer"
REAL = "real"
TEXT = "text"
TEMPORAL = "temporal"

KINDS = (NULL, BOOL, INTEGER, REAL, TEXT, TEMPORAL)
NUMERIC_KINDS = frozenset({INTEGER, REAL})
VALUE_KINDS = frozenset({INTEGER, REAL, TEMPORAL})


@dataclass(frozen=True)
class CellValue:
    """A typed cell payload.

    ``kind`` is one of :data:`KINDS`. Temporal payloads are kept as canonical
    ISO strings (``yyyy-mm-dd`` or ``yyyy-mm``) so they sort chronologically.
    """

    kind: str
    value: Any = None
    unit: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.kind == NULL:
            if self.value is not None or self.unit is not None:
                raise ValueError("Null carries no payload and no unit")
        elif self.kind in NUMERIC_KINDS:
            if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
                raise ValueError(f"{self.kind} payload must be numeric")
            if not math.isfinite(self.value):
                raise ValueError("numeric payloads must be finite")
            if self.kind == INTEGER and not isinstance(self.value, int):
                raise ValueError("integer payload must be int")
            if self.kind == REAL:
                object.__setattr__(self, "value", float(self.value))

    @property
    def is_null(self) -> bool:
        return self.kind == NULL

    @property
    def is_numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS

    def text(self) -> str:
        """Canonical textual rendering (units excluded)."""
        if self.kind == NULL:
            return ""
        if self.kind == BOOL:
            return "true" if self.value else "false"
        if self.kind == REAL:
            return repr(self.value)
        return str(self.value)

    def to_json(self) -> Any:
        return None if self.kind == NULL else self.value

    def __str__(self) -> str:
        s = self.text()
        return s + self.unit if self.unit == "%" else s


NULL_VALUE = CellValue(NULL)


def Integer(v: int, unit: str | None = None) -> CellValue:
    return CellValue(INTEGER, int(v), unit)


def Real(v: float, unit: str | None = None) -> CellValue:
    return CellValue(REAL, float(v), unit)


def Text(v: str) -> CellValue:
    return CellValue(TEXT, v)


_INT_RE = re.compile(r"[+-]?\d+")
_REAL_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")
_DATE_RE = re.compile(r"(\d{4})[-/](\d{1,2})(?:[-/](\d{1,2}))?")


def _temporal(raw: str) -> str | None:
    m = _DATE_RE.fullmatch(raw)
    if not m:
        return None
    year, month, day = int(m.group(1)), int(m.group(2)), m.group(3)
    if not 1 <= month <= 12:
        return None
    if day is None:
        return f"{year:04d}-{month:02d}"
    try:
        return datetime.date(year, month, int(day)).isoformat()
    except ValueError:
        return None


def infer_value(raw: Any) -> CellValue:
    """Type a raw cell string. Total and locale independent.

    >>> infer_value("3.5%")
    CellValue(kind='real', value=3.5, unit='%')
    """
    if raw is None:
        return NULL_VALUE
    if isinstance(raw, bool):
        return CellValue(BOOL, raw)
    if isinstance(raw, int):
        return Integer(raw)
    if isinstance(raw, float):
        return Real(raw) if math.isfinite(raw) else Text(str(raw))
    s = str(raw).strip()
    if not s:
        return NULL_VALUE
    if _INT_RE.fullmatch(s):
        return Integer(int(s))
    if _REAL_RE.fullmatch(s):
        return Real(float(s))
    if s.endswith("%"):
        body = s[:-1].strip()
        if _REAL_RE.fullmatch(body):
            return Real(float(body), "%")
    iso = _temporal(s)
    if iso is not None:
        return CellValue(TEMPORAL, iso)
    if s.lower() in ("true", "false"):
        return CellValue(BOOL, s.lower() == "true")
    return Text(s)


@dataclass(frozen=True)
class GridCell:
    row: int
    col: int
    row_span: int = 1
    col_span: int = 1
    value: CellValue = NULL_VALUE
    emphasis: bool = False

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise OutOfBounds(f"negative anchor ({self.row}, {self.col})")
        if self.row_span < 1 or self.col_span < 1:
            raise MalformedDocument(f"span must be >= 1 at ({self.row}, {self.col})")

    def covers(self, row: int, col: int) -> bool:
        return (self.row <= row < self.row + self.row_span
                and self.col <= col < self.col + self.col_span)

    def positions(self) -> Iterator[tuple[int, int]]:
        for r in range(self.row, self.row + self.row_span):
            for c in range(self.col, self.col + self.col_span):
                yield r, c


@dataclass(frozen=True)
class RawGrid:
    """Immutable grid. Positions not covered by any cell are implicit Nulls."""

    n_rows: int
    n_cols: int
    cells: tuple[GridCell, ...] = ()
    _cover: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise MalformedDocument("grid dimensions must be non-negative")
        cells = tuple(sorted(self.cells, key=lambda c: (c.row, c.col)))
        object.__setattr__(self, "cells", cells)
        cover: dict[tuple[int, int], GridCell] = {}
        for cell in cells:
            if (cell.row + cell.row_span > self.n_rows
                    or cell.col + cell.col_span > self.n_cols):
                raise OutOfBounds(
                    f"cell at ({cell.row}, {cell.col}) exceeds {self.n_rows}x{self.n_cols}")
            for pos in cell.positions():
                if pos in cover:
                    other = cover[pos]
                    raise OverlappingSpans(
                        f"cells at ({other.row}, {other.col}) and ({cell.row}, {cell.col}) "
                        f"both cover {pos}")
                cover[pos] = cell
        object.__setattr__(self, "_cover", cover)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def anchor_at(self, row: int, col: int) -> GridCell | None:
        """Explicit cell anchored exactly at (row, col), if any."""
        cell = self._cover.get((row, col))
        return cell if cell is not None and (cell.row, cell.col) == (row, col) else None

    def covering(self, row: int, col: int) -> GridCell | None:
        return self._cover.get((row, col))

    def value(self, row: int, col: int) -> CellValue:
        return resolve_cell(self, row, col).value


def resolve_cell(grid: RawGrid, row: int, col: int) -> GridCell:
    """Return the cell whose span covers (row, col).

    Uncovered positions yield a synthetic 1x1 Null anchor.
    """
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise OutOfBounds(f"({row}, {col}) outside {grid.n_rows}x{grid.n_cols}")
    cell = grid.covering(row, col)
    return cell if cell is not None else GridCell(row, col)


def _decode(document: bytes | str) -> str:
    if isinstance(document, str):
        return document
    try:
        return document.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise UnreadableEncoding(str(exc)) from exc


def _as_int(obj: dict, key: str, default: int | None = None) -> int:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedDocument(f"field {key!r} must be an integer, got {v!r}")
    return v


def ingest_grid(document: bytes | str) -> RawGrid:
    """Parse a grid document (JSON) into a :class:`RawGrid`."""
    try:
        doc = json.loads(_decode(document))
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cells", []), list):
        raise MalformedDocument("grid document must be an object with a 'cells' list")
    n_rows, n_cols = _as_int(doc, "n_rows"), _as_int(doc, "n_cols")
    cells = []
    for item in doc.get("cells", []):
        if not isinstance(item, dict):
            raise MalformedDocument(f"cell entry must be an object: {item!r}")
        emph = item.get("emph", False)
        if not isinstance(emph, bool):
            raise MalformedDocument("'emph' must be a boolean")
        raw = item.get("v")
        if isinstance(raw, (list, dict)):
            raise MalformedDocument(f"unsupported cell value {raw!r}")
        cells.append(GridCell(
            row=_as_int(item, "r"), col=_as_int(item, "c"),
            row_span=_as_int(item, "rs", 1), col_span=_as_int(item, "cs", 1),
            value=infer_value(raw), emphasis=emph,
        ))
    return RawGrid(n_rows, n_cols, tuple(cells))


def render_grid(grid: RawGrid) -> str:
    """Inverse of :func:`ingest_grid` up to value typing."""
    cells = []
    for cell in grid.cells:
        v = cell.value
        cells.append({
            "r": cell.row, "c": cell.col, "rs": cell.row_span, "cs": cell.col_span,
            "v": render_value(v), "emph": cell.emphasis,
        })
    return json.dumps({"n_rows": grid.n_rows, "n_cols": grid.n_cols, "cells": cells},
                      ensure_ascii=False)


def ingest_csv(document: bytes | str, delimiter: str = ",", header_rows: int = 1) -> RawGrid:
    """Parse delimiter-separated text into a grid of 1x1 cells.

    Ragged rows are padded with Null. The first ``header_rows`` rows get the
    emphasis bit.
    """
    text = _decode(document)
    if not text.strip():
        raise EmptyDocument("no content")
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter)]
    while rows and not any(s.strip() for s in rows[-1]):
        rows.pop()
    if not rows:
        raise EmptyDocument("no rows")
    n_cols = max(len(r) for r in rows)
    cells = []
    for i, row in enumerate(rows):
        for j in range(n_cols):
            raw = row[j] if j < len(row) else ""
            cells.append(GridCell(i, j, value=infer_value(raw), emphasis=i < header_rows))
    return RawGrid(len(rows), n_cols, tuple(cells))


def render_value(v: CellValue) -> str:
    s = v.text()
    if v.unit == "%":
        s += "%"
    return s


def render_csv(grid: RawGrid, delimiter: str = ",") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    for r in range(grid.n_rows):
        writer.writerow([render_value(grid.value(r, c)) for c in range(grid.n_cols)])
    return buf.getvalue()


def iter_positions(grid: RawGrid) -> Iterable[tuple[int, int]]:
    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            yield r, c
