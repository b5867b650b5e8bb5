from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabresearch.errors import (
    EmptyDocument,
    MalformedDocument,
    OutOfBounds,
    OverlappingSpans,
)
from tabresearch.table import (
    CellValue,
    GridCell,
    RawGrid,
    infer_value,
    ingest_csv,
    ingest_grid,
    iter_positions,
    render_csv,
    render_grid,
    resolve_cell,
)


def test_single_cell_document():
    grid = ingest_grid(json.dumps({"n_rows": 1, "n_cols": 1,
                                   "cells": [{"r": 0, "c": 0, "rs": 1, "cs": 1, "v": "x"}]}))
    assert grid.shape == (1, 1)
    assert grid.value(0, 0) == CellValue("text", "x")


def test_f1_explicit_cells_and_span(f1_grid):
    assert f1_grid.shape == (4, 4)
    assert len(f1_grid.cells) == 14
    sales = resolve_cell(f1_grid, 0, 3)
    assert (sales.row, sales.col, sales.col_span) == (0, 1, 3)
    assert resolve_cell(f1_grid, 0, 2) is sales
    assert resolve_cell(f1_grid, 2, 1).value == CellValue("integer", 10)


def test_out_of_bounds_lookup(f1_grid):
    with pytest.raises(OutOfBounds):
        resolve_cell(f1_grid, 9, 9)


def test_overlapping_spans_rejected():
    doc = {"n_rows": 1, "n_cols": 2, "cells": [
        {"r": 0, "c": 0, "rs": 1, "cs": 2, "v": "a"}, {"r": 0, "c": 1, "v": "b"}]}
    with pytest.raises(OverlappingSpans):
        ingest_grid(json.dumps(doc))


def test_span_exceeding_grid_rejected():
    doc = {"n_rows": 1, "n_cols": 1, "cells": [{"r": 0, "c": 0, "cs": 2, "v": "a"}]}
    with pytest.raises(OutOfBounds):
        ingest_grid(json.dumps(doc))


@pytest.mark.parametrize("text", ["not json", "[]", '{"n_rows": "2", "n_cols": 1}',
                                  '{"n_rows": 1, "n_cols": 1, "cells": [{"r": 0, "c": 0, "v": [1]}]}'])
def test_malformed_documents(text):
    with pytest.raises(MalformedDocument):
        ingest_grid(text)


def test_csv_basic_and_padding():
    grid = ingest_csv("a,b\n1,2")
    assert grid.shape == (2, 2)
    assert grid.value(0, 0).kind == "text" and grid.value(1, 1) == CellValue("integer", 2)
    ragged = ingest_csv("a,b\n1")
    assert ragged.shape == (2, 2) and ragged.value(1, 1).is_null


def test_csv_empty():
    with pytest.raises(EmptyDocument):
        ingest_csv("")


@pytest.mark.parametrize("raw,kind,value,unit", [
    ("42", "integer", 42, None),
    ("3.5%", "real", 3.5, "%"),
    ("", "null", None, None),
    ("  ", "null", None, None),
    ("Q3", "text", "Q3", None),
    ("1e3", "real", 1000.0, None),
    ("2024-01-05", "temporal", "2024-01-05", None),
])
def test_infer_value(raw, kind, value, unit):
    v = infer_value(raw)
    assert (v.kind, v.value, v.unit) == (kind, value, unit)


def test_cell_value_invariants():
    with pytest.raises(ValueError):
        CellValue("null", 1)
    with pytest.raises(ValueError):
        CellValue("integer", 1.5)
    with pytest.raises(ValueError):
        CellValue("real", float("nan"))


def test_grid_document_round_trip(f1_grid):
    again = ingest_grid(render_grid(f1_grid))
    assert again.cells == f1_grid.cells


@st.composite
def span_grids(draw):
    n_rows = draw(st.integers(1, 5))
    n_cols = draw(st.integers(1, 5))
    taken: set = set()
    cells = []
    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) in taken or not draw(st.booleans()):
                continue
            rs = draw(st.integers(1, n_rows - r))
            cs = draw(st.integers(1, n_cols - c))
            block = {(i, j) for i in range(r, r + rs) for j in range(c, c + cs)}
            if block & taken:
                rs = cs = 1
                block = {(r, c)}
            taken |= block
            cells.append(GridCell(r, c, rs, cs, infer_value(draw(st.sampled_from(["1", "x", ""])))))
    return RawGrid(n_rows, n_cols, tuple(cells))


@settings(max_examples=100, deadline=None)
@given(span_grids())
def test_span_partition(grid):
    covered = sum(c.row_span * c.col_span for c in grid.cells)
    implicit = sum(1 for r, c in iter_positions(grid) if grid.covering(r, c) is None)
    assert covered + implicit == grid.n_rows * grid.n_cols


@settings(max_examples=50, deadline=None)
@given(span_grids())
def test_resolve_cell_is_a_function(grid):
    for r, c in iter_positions(grid):
        a, b = resolve_cell(grid, r, c), resolve_cell(grid, r, c)
        assert a == b and a.covers(r, c)


_VALUES = st.one_of(
    st.integers(-10_000, 10_000).map(str),
    st.floats(-1e6, 1e6, allow_nan=False).map(repr),
    st.sampled_from(["", "Q3", "North", "2023-07-01", "12.5%", "true"]),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(_VALUES, min_size=3, max_size=3), min_size=1, max_size=5))
def test_csv_round_trip(rows):
    grid = ingest_csv("\n".join(",".join(r) for r in rows), header_rows=0)
    again = ingest_csv(render_csv(grid), header_rows=0)
    assert [[again.value(r, c) for c in range(3)] for r in range(again.n_rows)] == \
        [[grid.value(r, c) for c in range(3)] for r in range(grid.n_rows)]
