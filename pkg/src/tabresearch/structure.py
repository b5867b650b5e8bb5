"""Latent structure of an unstructured table.

Header bands are located along both axes, merged header cells are turned into
per-axis forests by span alignment, and the result is organised as a typed
graph whose data-cell nodes are described from both directions. The graph can
be linearised into relational triples for agent prompts, and projected into a
rectangular :class:`DataView` that the operators run on.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import NoDataRegion
from .table import (
    NULL_VALUE,
    TEMPORAL,
    VALUE_KINDS,
    CellValue,
    RawGrid,
    Text,
    resolve_cell,
)

COL = "col"
ROW = "row"
ROOT_ID = "table"
ROW_KEY = "@row"
PATH_SEP = "/"

HAS_CHILD = "has_child"
HAS_COLUMN_HEADER = "has_column_header"
HAS_ROW_HEADER = "has_row_header"
COL_DESCRIBES = "col_describes"
ROW_DESCRIBES = "row_describes"
RELATIONS = (HAS_CHILD, HAS_COLUMN_HEADER, HAS_ROW_HEADER, COL_DESCRIBES, ROW_DESCRIBES)

AGGREGATE_LEXICON = frozenset({"total", "sum", "avg", "average", "overall", "合计"})
VALUE_SHARE = 0.5

_UNIT_SUFFIX = re.compile(r"\(([^()]+)\)\s*$")


@dataclass(frozen=True)
class HeaderNode:
    id: str
    axis: str
    label: str
    span: tuple[int, int]
    depth: int
    parent: str | None
    children: tuple[str, ...]
    anchor: tuple[int, int]
    value: CellValue = NULL_VALUE

    @property
    def width(self) -> int:
        return self.span[1] - self.span[0]

    def contains(self, index: int) -> bool:
        return self.span[0] <= index < self.span[1]


@dataclass(frozen=True)
class DataNode:
    id: str
    row: int
    col: int
    value: CellValue

    @property
    def label(self) -> str:
        return self.value.text()


@dataclass(frozen=True)
class HeaderLayout:
    """Header band sizes plus the two header forests.

    ``d_c`` is the number of column-header rows and ``d_r`` the number of
    row-header columns; the data region is ``rows >= d_c`` x ``cols >= d_r``.
    """

    d_c: int
    d_r: int
    n_rows: int
    n_cols: int
    col_nodes: tuple[HeaderNode, ...]
    row_nodes: tuple[HeaderNode, ...]

    def nodes(self, axis: str) -> tuple[HeaderNode, ...]:
        return self.col_nodes if axis == COL else self.row_nodes

    def node(self, node_id: str) -> HeaderNode:
        for n in self.col_nodes + self.row_nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def roots(self, axis: str) -> tuple[HeaderNode, ...]:
        return tuple(n for n in self.nodes(axis) if n.parent is None)

    def data_rows(self) -> range:
        return range(self.d_c, self.n_rows)

    def data_cols(self) -> range:
        return range(self.d_r, self.n_cols)

    def deepest(self, axis: str, index: int) -> HeaderNode | None:
        """Deepest header on ``axis`` whose span covers ``index``."""
        best = None
        for n in self.nodes(axis):
            if n.contains(index) and (best is None or n.depth > best.depth):
                best = n
        return best

    def path(self, node: HeaderNode) -> tuple[str, ...]:
        labels = []
        cur: HeaderNode | None = node
        while cur is not None:
            labels.append(cur.label)
            cur = self.node(cur.parent) if cur.parent else None
        return tuple(reversed(labels))


@dataclass(frozen=True)
class MetaInfo:
    units: Mapping[str, str] = field(default_factory=dict)
    temporal_markers: frozenset = frozenset()
    aggregation_rows: frozenset = frozenset()
    title: str | None = None
    header_depths: tuple[int, int] = (1, 0)

    def digest(self) -> str:
        d_c, d_r = self.header_depths
        parts = [f"header_depths: {d_c}x{d_r}"]
        if self.title:
            parts.append(f"title: {self.title}")
        if self.units:
            parts.append("units: " + ", ".join(f"{k}={v}" for k, v in sorted(self.units.items())))
        if self.temporal_markers:
            parts.append("temporal: " + ", ".join(sorted(self.temporal_markers)))
        if self.aggregation_rows:
            parts.append("aggregation_rows: " + ", ".join(map(str, sorted(self.aggregation_rows))))
        return "\n".join(parts)


@dataclass(frozen=True)
class Edge:
    src: str
    kind: str
    dst: str


@dataclass(frozen=True)
class MetaGraph:
    layout: HeaderLayout | None
    nodes: Mapping[str, object]
    edges: tuple[Edge, ...]

    def label(self, node_id: str) -> str:
        if node_id == ROOT_ID:
            return ROOT_ID
        return self.nodes[node_id].label

    def out_edges(self, node_id: str, kind: str | None = None) -> list[Edge]:
        return [e for e in self.edges if e.src == node_id and (kind is None or e.kind == kind)]

    def in_edges(self, node_id: str, kind: str | None = None) -> list[Edge]:
        return [e for e in self.edges if e.dst == node_id and (kind is None or e.kind == kind)]

    def data_nodes(self) -> list[DataNode]:
        return [n for n in self.nodes.values() if isinstance(n, DataNode)]

    def header_nodes(self) -> list[HeaderNode]:
        return [n for n in self.nodes.values() if isinstance(n, HeaderNode)]


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"relation {self.relation!r} outside the closed vocabulary")

    def render(self) -> str:
        return f"({self.subject}, {self.relation}, {self.object})"

    def __str__(self) -> str:
        return self.render()


def render_triples(triples: Iterable[Triple]) -> str:
    return "\n".join(t.render() for t in triples)


@dataclass(frozen=True)
class Record:
    row: str
    values: Mapping[str, CellValue]

    def get(self, name: str) -> CellValue:
        if name == ROW_KEY:
            return Text(self.row)
        return self.values[name]


@dataclass(frozen=True)
class DataView:
    """Rectangular projection: one record per data row.

    ``dim_descriptors`` name the row-header columns, ``col_descriptors`` the
    measure columns. Every record also exposes its row path under ``@row``.
    """

    records: tuple[Record, ...]
    col_descriptors: tuple[str, ...]
    dim_descriptors: tuple[str, ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return self.dim_descriptors + self.col_descriptors

    def descriptors(self) -> tuple[str, ...]:
        return (ROW_KEY,) + self.columns

    def has(self, name: str) -> bool:
        return name == ROW_KEY or name in self.columns

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list[CellValue]:
        return [r.get(name) for r in self.records]

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "records": [
                {"row": r.row, "values": {k: r.values[k].to_json() for k in self.columns}}
                for r in self.records
            ],
        }


# header detection ---------------------------------------------------------


def _passes(values: list[CellValue]) -> bool:
    nonnull = [v for v in values if not v.is_null]
    if not nonnull:
        return True
    typed = sum(1 for v in nonnull if v.kind in VALUE_KINDS)
    return typed / len(nonnull) >= VALUE_SHARE


def _row_values(grid: RawGrid, r: int, cols: range) -> list[CellValue]:
    out = []
    for c in cols:
        cell = grid.anchor_at(r, c)
        if cell is not None:
            out.append(cell.value)
    return out


def _col_values(grid: RawGrid, c: int, rows: range) -> list[CellValue]:
    out = []
    for r in rows:
        cell = grid.anchor_at(r, c)
        if cell is not None:
            out.append(cell.value)
    return out


def _header_rows_for(grid: RawGrid, d_r: int) -> int | None:
    cols = range(d_r, grid.n_cols)
    i = grid.n_rows
    while i - 1 >= 1 and _passes(_row_values(grid, i - 1, cols)):
        i -= 1
    return None if i >= grid.n_rows else i


def _header_cols_for(grid: RawGrid, d_c: int) -> int | None:
    rows = range(d_c, grid.n_rows)
    j = grid.n_cols
    while j - 1 >= 0 and _passes(_col_values(grid, j - 1, rows)):
        j -= 1
    return None if j >= grid.n_cols else j


def _forest(cells, axis: str) -> tuple[HeaderNode, ...]:
    """Span alignment: each header's parent is the nearest enclosing header
    on an earlier line of the same band."""
    if axis == COL:
        cells = sorted(cells, key=lambda c: (c.row, c.col))
        line = lambda c: c.row  # noqa: E731
        span = lambda c: (c.col, c.col + c.col_span)  # noqa: E731
    else:
        cells = sorted(cells, key=lambda c: (c.col, c.row))
        line = lambda c: c.col  # noqa: E731
        span = lambda c: (c.row, c.row + c.row_span)  # noqa: E731

    info: dict[str, dict] = {}
    order: list[str] = []
    for cell in cells:
        s = span(cell)
        parent = None
        for pid in reversed(order):
            p = info[pid]
            if p["line"] < line(cell) and p["span"][0] <= s[0] and s[1] <= p["span"][1]:
                if parent is None or p["line"] > info[parent]["line"]:
                    parent = pid
        nid = f"{axis}:{cell.row},{cell.col}"
        info[nid] = {
            "cell": cell, "span": s, "line": line(cell), "parent": parent,
            "depth": 0 if parent is None else info[parent]["depth"] + 1, "children": [],
        }
        if parent is not None:
            info[parent]["children"].append(nid)
        order.append(nid)

    nodes = []
    for nid in order:
        d = info[nid]
        kids = sorted(d["children"], key=lambda k: (info[k]["span"][0], info[k]["line"]))
        nodes.append(HeaderNode(
            id=nid, axis=axis, label=d["cell"].value.text(), span=d["span"],
            depth=d["depth"], parent=d["parent"], children=tuple(kids),
            anchor=(d["cell"].row, d["cell"].col), value=d["cell"].value,
        ))
    return tuple(nodes)


def _title_cell(grid: RawGrid):
    """A lone non-null cell spanning the whole first row."""
    row0 = [c for c in grid.cells if c.row == 0 and not c.value.is_null]
    if grid.n_cols > 1 and len(row0) == 1 and row0[0].col_span == grid.n_cols:
        return row0[0]
    return None


def detect_headers(grid: RawGrid) -> HeaderLayout:
    """Locate the column-header rows and row-header columns of ``grid``.

    A band boundary is the smallest index past which every line of the
    candidate data region is at least half value-typed among its non-null
    cells. The two boundaries depend on each other, so the smallest
    row-header width whose induced column-header depth reproduces it is kept.
    """
    if grid.n_rows == 0 or grid.n_cols == 0:
        raise NoDataRegion("empty grid")
    for cand in range(grid.n_cols):
        d_c = _header_rows_for(grid, cand)
        if d_c is None:
            continue
        d_r = _header_cols_for(grid, d_c)
        if d_r == cand:
            break
    else:
        raise NoDataRegion("no row/column band split leaves a value-typed data region")

    title = _title_cell(grid)
    col_cells = [c for c in grid.cells
                 if c.row < d_c and not c.value.is_null and not (d_c > 1 and c is title)]
    row_cells = [c for c in grid.cells
                 if c.row >= d_c and c.col < d_r and not c.value.is_null]
    return HeaderLayout(
        d_c=d_c, d_r=d_r, n_rows=grid.n_rows, n_cols=grid.n_cols,
        col_nodes=_forest(col_cells, COL), row_nodes=_forest(row_cells, ROW),
    )


# descriptors ----------------------------------------------------------------


def disambiguate(names: list[str]) -> list[str]:
    """Suffix repeated names with ``#k`` (1-based, left to right)."""
    counts = Counter(names)
    seen: Counter = Counter()
    out = []
    for n in names:
        if counts[n] > 1:
            seen[n] += 1
            out.append(f"{n}#{seen[n]}")
        else:
            out.append(n)
    return out


def _col_path(layout: HeaderLayout, c: int) -> str:
    node = layout.deepest(COL, c)
    return PATH_SEP.join(layout.path(node)) if node else f"col{c}"


def _row_path(layout: HeaderLayout, r: int) -> str:
    node = layout.deepest(ROW, r)
    return PATH_SEP.join(layout.path(node)) if node else str(r - layout.d_c)


def column_descriptors(layout: HeaderLayout) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(dim descriptors, measure descriptors), jointly disambiguated."""
    dims = []
    for j in range(layout.d_r):
        node = layout.deepest(COL, j)
        dims.append(PATH_SEP.join(layout.path(node)) if node else f"level{j}")
    measures = [_col_path(layout, c) for c in layout.data_cols()]
    names = disambiguate(dims + measures)
    return tuple(names[:len(dims)]), tuple(names[len(dims):])


# meta -------------------------------------------------------------------------


def _tokens(label: str) -> set[str]:
    return set(re.findall(r"\w+", label.lower()))


def is_aggregate_label(label: str) -> bool:
    return bool(_tokens(label) & AGGREGATE_LEXICON) or "合计" in label


def extract_meta(grid: RawGrid, layout: HeaderLayout) -> MetaInfo:
    _, measures = column_descriptors(layout)
    units: dict[str, str] = {}
    for c, desc in zip(layout.data_cols(), measures):
        node = layout.deepest(COL, c)
        cur = node
        while cur is not None:
            m = _UNIT_SUFFIX.search(cur.label)
            if m:
                units.setdefault(desc, m.group(1).strip())
            cur = layout.node(cur.parent) if cur.parent else None
        if desc not in units:
            for r in layout.data_rows():
                if grid.value(r, c).unit == "%":
                    units[desc] = "%"
                    break

    temporal = frozenset(
        n.label for n in layout.col_nodes + layout.row_nodes if n.value.kind == TEMPORAL)

    agg_rows = set()
    for r in layout.data_rows():
        for n in layout.row_nodes:
            if n.contains(r) and is_aggregate_label(n.label):
                agg_rows.add(r)

    title_cell = _title_cell(grid)
    title = title_cell.value.text() if title_cell is not None else None

    return MetaInfo(units=units, temporal_markers=temporal, aggregation_rows=frozenset(agg_rows),
                    title=title, header_depths=(layout.d_c, layout.d_r))


# graph ------------------------------------------------------------------------


def _preorder(layout: HeaderLayout, axis: str) -> list[HeaderNode]:
    key = (lambda n: (n.span[0], n.anchor[0])) if axis == COL else (lambda n: (n.span[0], n.anchor[1]))
    out: list[HeaderNode] = []

    def visit(node: HeaderNode):
        out.append(node)
        for cid in node.children:
            visit(layout.node(cid))

    for root in sorted(layout.roots(axis), key=key):
        visit(root)
    return out


def build_meta_graph(grid: RawGrid, layout: HeaderLayout) -> MetaGraph:
    nodes: dict[str, object] = {}
    edges: list[Edge] = []
    col_order = _preorder(layout, COL)
    row_order = _preorder(layout, ROW)
    for n in col_order + row_order:
        nodes[n.id] = n

    for n in col_order:
        if n.parent is None:
            edges.append(Edge(ROOT_ID, HAS_COLUMN_HEADER, n.id))
    for n in row_order:
        if n.parent is None:
            edges.append(Edge(ROOT_ID, HAS_ROW_HEADER, n.id))
    for n in col_order + row_order:
        for cid in n.children:
            edges.append(Edge(n.id, HAS_CHILD, cid))

    for r in layout.data_rows():
        row_head = layout.deepest(ROW, r)
        for c in layout.data_cols():
            dn = DataNode(f"cell:{r},{c}", r, c, resolve_cell(grid, r, c).value)
            nodes[dn.id] = dn
            col_head = layout.deepest(COL, c)
            edges.append(Edge(col_head.id if col_head else ROOT_ID, COL_DESCRIBES, dn.id))
            edges.append(Edge(row_head.id if row_head else ROOT_ID, ROW_DESCRIBES, dn.id))
    return MetaGraph(layout=layout, nodes=nodes, edges=tuple(edges))


def linearize_triples(graph: MetaGraph, include_data: bool = False) -> list[Triple]:
    """Header triples (root edges first, then per-axis preorder).

    With ``include_data`` the describes edges are appended as well.
    """
    structural = [e for e in graph.edges if e.kind in (HAS_COLUMN_HEADER, HAS_ROW_HEADER)]
    structural += [e for e in graph.edges if e.kind == HAS_CHILD]
    out = [Triple(graph.label(e.src), e.kind, graph.label(e.dst)) for e in structural]
    if include_data:
        out += [Triple(graph.label(e.src), e.kind, graph.label(e.dst))
                for e in graph.edges if e.kind in (COL_DESCRIBES, ROW_DESCRIBES)]
    return out


def project_view(grid: RawGrid, graph: MetaGraph) -> DataView:
    layout = graph.layout
    if layout is None or not layout.data_rows() or not layout.data_cols():
        raise NoDataRegion("graph has no data region")
    dims, measures = column_descriptors(layout)
    row_paths = disambiguate([_row_path(layout, r) for r in layout.data_rows()])
    records = []
    for r, path in zip(layout.data_rows(), row_paths):
        values: dict[str, CellValue] = {}
        for j, name in enumerate(dims):
            cell = resolve_cell(grid, r, j)
            values[name] = cell.value
        for c, name in zip(layout.data_cols(), measures):
            values[name] = resolve_cell(grid, r, c).value
        records.append(Record(path, values))
    return DataView(tuple(records), measures, dims)


@dataclass(frozen=True)
class TableStructure:
    """Everything inferred from one grid, bundled for the engine."""

    grid: RawGrid
    layout: HeaderLayout
    meta: MetaInfo
    graph: MetaGraph
    triples: tuple[Triple, ...]
    view: DataView


def analyze(grid: RawGrid) -> TableStructure:
    layout = detect_headers(grid)
    graph = build_meta_graph(grid, layout)
    return TableStructure(
        grid=grid, layout=layout, meta=extract_meta(grid, layout), graph=graph,
        triples=tuple(linearize_triples(graph)), view=project_view(grid, graph),
    )
