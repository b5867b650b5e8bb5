"""Seed operation bank, operation maps and candidate path enumeration."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from typing import Any, Iterable, Mapping, Sequence

from .errors import CyclicConstraints, EmptySelection, NoValidOrder
from .structure import (
    HAS_CHILD,
    HAS_COLUMN_HEADER,
    HAS_ROW_HEADER,
    PATH_SEP,
    ROW_KEY,
    Triple,
)
from .table import CellValue, NULL_VALUE, infer_value

logger = logging.getLogger(__name__)

ARROW = "→"
DEFAULT_K = 8
MAX_ORDERS = 200_000


class OperatorKind(str, Enum):
    LOAD = "LOAD"
    CLEAN = "CLEAN"
    FILTER = "FILTER"
    GROUP = "GROUP"
    AGG = "AGG"
    JOIN = "JOIN"
    SORT = "SORT"
    PIVOT = "PIVOT"
    LIMIT = "LIMIT"
    DERIVE = "DERIVE"
    CHART = "CHART"

    def __str__(self) -> str:
        return self.value


K = OperatorKind

COMPARATORS = ("==", "!=", "<", "<=", ">", ">=", "contains", "notnull")
AGG_FUNCTIONS = ("sum", "mean", "min", "max", "count")
CLEAN_POLICIES = ("drop_null_rows", "fill_zero", "coerce_numeric")
CHART_KINDS = ("pie", "line", "bar", "scatter")
DIRECTIONS = ("asc", "desc")


@dataclass(frozen=True)
class KindSpec:
    kind: OperatorKind
    params: tuple[str, ...]
    input: str
    output: str
    prerequisites: tuple[str, ...] = ()
    initial: bool = False
    terminal: bool = False
    numeric: bool = False
    note: str = ""


_BANK = (
    KindSpec(K.LOAD, (), "table", "view", initial=True,
             note="binds the projected view; the unique source operation"),
    KindSpec(K.CLEAN, ("policy",), "view", "view",
             note="drop_null_rows | fill_zero | coerce_numeric over measure columns"),
    KindSpec(K.FILTER, ("descriptor", "comparator", "literal"), "view|groups|aggregated", "same",
             note="may run before or after aggregation; Null never matches"),
    KindSpec(K.GROUP, ("descriptors",), "view", "groups",
             note="partitions records by key tuple in first-appearance order"),
    KindSpec(K.AGG, ("function", "measure"), "groups|view", "scalar|aggregated",
             prerequisites=("grouping scope",), numeric=True,
             note="per group when a grouping scope is in effect, else over the whole view"),
    KindSpec(K.JOIN, ("view", "left_key", "right_key"), "view", "view",
             note="inner equi-join with one auxiliary view"),
    KindSpec(K.SORT, ("descriptor", "direction"), "view|groups|aggregated", "view", numeric=True,
             note="stable; Nulls last in either direction"),
    KindSpec(K.PIVOT, ("row", "col", "measure"), "view", "view",
             note="rows to columns; duplicate (row, col) pairs are an error"),
    KindSpec(K.LIMIT, ("k",), "view|groups|aggregated", "view",
             prerequisites=("ordering scope",), note="keeps the first k records"),
    KindSpec(K.DERIVE, ("name", "expr"), "view|groups", "same", numeric=True,
             note="appends an arithmetic column over bracketed descriptors"),
    KindSpec(K.CHART, ("chart", "x", "series"), "view|aggregated", "chart", terminal=True,
             note="declarative chart specification; no successor"),
)


def seed_bank() -> list[KindSpec]:
    """The closed operator vocabulary with its contracts."""
    return list(_BANK)


def kind_spec(kind: OperatorKind) -> KindSpec:
    for spec in _BANK:
        if spec.kind == kind:
            return spec
    raise KeyError(kind)


_PLAIN = re.compile(r"[^,()\[\]\"→=]+")


def _render(x: Any) -> str:
    """Canonical parameter rendering; quoted when ambiguous so signatures stay injective."""
    if isinstance(x, CellValue):
        if x.is_null:
            return "null"
        if x.kind == "text":
            return json.dumps(x.value, ensure_ascii=False)
        return x.text() + (x.unit or "")
    s = str(x)
    if (not s or not _PLAIN.fullmatch(s) or s != s.strip() or s == "null"
            or infer_value(s).kind != "text"):
        return json.dumps(s, ensure_ascii=False)
    return s


@dataclass(frozen=True)
class OperatorInstance:
    kind: OperatorKind
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        p = dict(self.params)
        kind = self.kind
        if kind == K.CLEAN and p.get("policy") not in CLEAN_POLICIES:
            raise ValueError(f"CLEAN policy must be one of {CLEAN_POLICIES}")
        if kind == K.FILTER:
            if p.get("comparator") not in COMPARATORS:
                raise ValueError(f"FILTER comparator must be one of {COMPARATORS}")
            lit = p.get("literal", NULL_VALUE)
            p["literal"] = lit if isinstance(lit, CellValue) else infer_value(lit)
        if kind == K.GROUP:
            p["descriptors"] = tuple(p.get("descriptors", ()))
            if not p["descriptors"]:
                raise ValueError("GROUP needs at least one descriptor")
        if kind == K.AGG and p.get("function") not in AGG_FUNCTIONS:
            raise ValueError(f"AGG function must be one of {AGG_FUNCTIONS}")
        if kind == K.SORT:
            p.setdefault("direction", "asc")
            if p["direction"] not in DIRECTIONS:
                raise ValueError("SORT direction must be asc or desc")
        if kind == K.LIMIT:
            if not isinstance(p.get("k"), int) or isinstance(p.get("k"), bool) or p["k"] < 0:
                raise ValueError("LIMIT k must be a non-negative integer")
        if kind == K.CHART:
            if p.get("chart") not in CHART_KINDS:
                raise ValueError(f"CHART kind must be one of {CHART_KINDS}")
            p["series"] = tuple(p.get("series", ()))
        missing = [name for name in kind_spec(kind).params if name not in p]
        if missing:
            raise ValueError(f"{kind} missing params {missing}")
        object.__setattr__(self, "params", p)

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def __hash__(self) -> int:
        return hash(self.signature)

    @property
    def signature(self) -> str:
        p = self.params
        k = self.kind
        if k == K.LOAD:
            return "LOAD"
        if k == K.CLEAN:
            args = [p["policy"]]
        elif k == K.FILTER:
            args = [p["descriptor"], p["comparator"], p["literal"]]
        elif k == K.GROUP:
            args = list(p["descriptors"])
        elif k == K.AGG:
            args = [p["function"], p["measure"]]
        elif k == K.SORT:
            args = [p["descriptor"], p["direction"]]
        elif k == K.LIMIT:
            args = [p["k"]]
        elif k == K.JOIN:
            args = [p["view"], p["left_key"], p["right_key"]]
        elif k == K.PIVOT:
            args = [p["row"], p["col"], p["measure"]]
        elif k == K.DERIVE:
            return f"DERIVE({_render(p['name'])}={_render(p['expr'])})"
        else:
            args = [p["chart"], p["x"], *p["series"]]
        return f"{k.value}({','.join(_render(a) if not isinstance(a, int) else str(a) for a in args)})"

    def descriptors(self) -> tuple[str, ...]:
        """Descriptors this instance reads."""
        p, k = self.params, self.kind
        if k in (K.FILTER, K.SORT):
            return (p["descriptor"],)
        if k == K.GROUP:
            return tuple(p["descriptors"])
        if k == K.AGG:
            return () if p["function"] == "count" and p["measure"] == ROW_KEY else (p["measure"],)
        if k == K.JOIN:
            return (p["left_key"],)
        if k == K.PIVOT:
            return (p["row"], p["col"], p["measure"])
        if k == K.DERIVE:
            return tuple(expr_refs(p["expr"]))
        if k == K.CHART:
            return (p["x"], *p["series"])
        return ()

    def outputs(self) -> tuple[str, ...]:
        """Descriptors this instance introduces."""
        if self.kind == K.DERIVE:
            return (self.params["name"],)
        if self.kind == K.AGG:
            return (agg_output(self.params["function"], self.params["measure"]),)
        return ()

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value}
        for key, v in self.params.items():
            if isinstance(v, CellValue):
                v = {"t": v.kind, "v": v.value, "u": v.unit}
            elif isinstance(v, tuple):
                v = list(v)
            out[key] = v
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "OperatorInstance":
        params = {k: v for k, v in obj.items() if k != "kind"}
        lit = params.get("literal")
        if isinstance(lit, dict):
            params["literal"] = CellValue(lit["t"], lit.get("v"), lit.get("u"))
        return cls(OperatorKind(obj["kind"]), params)

    def __repr__(self) -> str:
        return f"<{self.signature}>"


def agg_output(function: str, measure: str) -> str:
    return f"{function}({measure})"


_REF = re.compile(r"\[([^\[\]]+)\]")


def expr_refs(expr: str) -> list[str]:
    return _REF.findall(expr)


# factories -------------------------------------------------------------------


def Load() -> OperatorInstance:
    return OperatorInstance(K.LOAD)


def Clean(policy: str) -> OperatorInstance:
    return OperatorInstance(K.CLEAN, {"policy": policy})


def Filter(descriptor: str, comparator: str, literal: Any = None) -> OperatorInstance:
    return OperatorInstance(K.FILTER, {"descriptor": descriptor, "comparator": comparator,
                                       "literal": literal})


def Group(*descriptors: str) -> OperatorInstance:
    return OperatorInstance(K.GROUP, {"descriptors": descriptors})


def Agg(function: str, measure: str) -> OperatorInstance:
    return OperatorInstance(K.AGG, {"function": function, "measure": measure})


def Sort(descriptor: str, direction: str = "asc") -> OperatorInstance:
    return OperatorInstance(K.SORT, {"descriptor": descriptor, "direction": direction})


def Limit(k: int) -> OperatorInstance:
    return OperatorInstance(K.LIMIT, {"k": k})


def Join(view: str, left_key: str, right_key: str) -> OperatorInstance:
    return OperatorInstance(K.JOIN, {"view": view, "left_key": left_key, "right_key": right_key})


def Pivot(row: str, col: str, measure: str) -> OperatorInstance:
    return OperatorInstance(K.PIVOT, {"row": row, "col": col, "measure": measure})


def Derive(name: str, expr: str) -> OperatorInstance:
    return OperatorInstance(K.DERIVE, {"name": name, "expr": expr})


def Chart(chart: str, x: str, *series: str) -> OperatorInstance:
    return OperatorInstance(K.CHART, {"chart": chart, "x": x, "series": series})


# paths -------------------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    ops: tuple[OperatorInstance, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise ValueError("a path holds at least one operation")

    @property
    def signature(self) -> str:
        return ARROW.join(op.signature for op in self.ops)

    @property
    def kinds(self) -> tuple[OperatorKind, ...]:
        return tuple(op.kind for op in self.ops)

    @property
    def terminal(self) -> OperatorKind:
        return self.ops[-1].kind

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def __hash__(self) -> int:
        return hash(self.signature)

    def __eq__(self, other) -> bool:
        return isinstance(other, Path) and self.signature == other.signature

    def __repr__(self) -> str:
        return f"Path({self.signature})"


def kinds_of_signature(signature: str) -> list[str]:
    """Operator kinds in a rendered path signature, in order."""
    return re.findall(r"(?:^|→)([A-Z]+)", signature)


# operation map -------------------------------------------------------------------


@dataclass(frozen=True)
class OperationMap:
    nodes: tuple[OperatorInstance, ...]
    must_precede: frozenset = frozenset()

    def predecessors(self, j: int) -> set[int]:
        return {i for i, k in self.must_precede if k == j}


def _numeric_sort(op: OperatorInstance) -> bool:
    return op.params["descriptor"] != ROW_KEY


def build_operation_map(instances: Sequence[OperatorInstance]) -> OperationMap:
    """Attach the fixed precedence rules to a set of selected instances.

    LOAD precedes everything; GROUP precedes AGG; AGG and SORT precede LIMIT;
    CHART comes last; CLEAN precedes numeric work (AGG, numeric SORT,
    DERIVE); an instance that reads a descriptor introduced by another comes
    after it. FILTER is left free relative to GROUP/AGG.
    """
    nodes = tuple(instances)
    if not nodes:
        raise NoValidOrder("empty instance set")
    edges: set[tuple[int, int]] = set()
    idx = {k: [i for i, op in enumerate(nodes) if op.kind == k] for k in OperatorKind}

    def add(a: Iterable[int], b: Iterable[int]):
        for i in a:
            for j in b:
                if i != j:
                    edges.add((i, j))

    everyone = range(len(nodes))
    add(idx[K.LOAD], everyone)
    add(idx[K.GROUP], idx[K.AGG])
    add(idx[K.AGG], idx[K.LIMIT])
    add(idx[K.SORT], idx[K.LIMIT])
    add([i for i in everyone if nodes[i].kind != K.CHART], idx[K.CHART])
    numeric = idx[K.AGG] + idx[K.DERIVE] + [i for i in idx[K.SORT] if _numeric_sort(nodes[i])]
    add(idx[K.CLEAN], numeric)
    for i, producer in enumerate(nodes):
        for name in producer.outputs():
            add([i], [j for j, op in enumerate(nodes) if name in op.descriptors()])

    ts = TopologicalSorter({j: {i for i, k in edges if k == j} for j in everyone})
    try:
        tuple(ts.static_order())
    except CycleError as exc:
        raise CyclicConstraints(str(exc)) from exc
    return OperationMap(nodes, frozenset(edges))


def _orders(op_map: OperationMap) -> Iterable[tuple[int, ...]]:
    n = len(op_map.nodes)
    preds = [op_map.predecessors(j) for j in range(n)]
    placed: list[int] = []
    used = [False] * n
    count = 0

    def rec():
        nonlocal count
        if count >= MAX_ORDERS:
            return
        if len(placed) == n:
            count += 1
            yield tuple(placed)
            return
        for j in range(n):
            if not used[j] and all(used[i] for i in preds[j]):
                used[j] = True
                placed.append(j)
                yield from rec()
                placed.pop()
                used[j] = False

    yield from rec()


def _redundant(ops: Sequence[OperatorInstance]) -> bool:
    return any(a.kind == b.kind for a, b in zip(ops, ops[1:]))


def enumerate_paths(op_map: OperationMap, K: int = DEFAULT_K, L_max: int | None = None) -> list[Path]:
    """Up to ``K`` distinct topological orders, lexicographic by signature."""
    if not op_map.nodes:
        raise NoValidOrder("empty operation map")
    if K < 1:
        raise ValueError("K must be >= 1")
    if L_max is not None and len(op_map.nodes) > L_max:
        raise ValueError(f"{len(op_map.nodes)} operations exceed L_max={L_max}")
    seen: dict[str, Path] = {}
    for order in _orders(op_map):
        ops = [op_map.nodes[i] for i in order]
        if _redundant(ops):
            continue
        path = Path(tuple(ops))
        seen.setdefault(path.signature, path)
    if not seen:
        raise NoValidOrder("every admissible order was pruned as redundant")
    return [seen[s] for s in sorted(seen)[:K]]


def respects(op_map: OperationMap, path: Path) -> bool:
    """True if ``path`` is a topological order over all nodes of ``op_map``."""
    if len(path) != len(op_map.nodes):
        return False
    remaining = list(range(len(op_map.nodes)))
    position: dict[int, int] = {}
    for pos, op in enumerate(path.ops):
        match = next((i for i in remaining if op_map.nodes[i].signature == op.signature), None)
        if match is None:
            return False
        remaining.remove(match)
        position[match] = pos
    return all(position[i] < position[j] for i, j in op_map.must_precede)


# descriptor vocabulary from triples ------------------------------------------------


@dataclass
class Vocabulary:
    """Header structure recovered from linearised triples."""

    col_paths: dict[str, tuple[str, ...]] = field(default_factory=dict)
    col_leaves: list[str] = field(default_factory=list)
    row_labels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    row_leaf: dict[str, bool] = field(default_factory=dict)

    def descriptors(self) -> set[str]:
        return set(self.col_leaves) | {ROW_KEY}

    def leaves_under(self, path: str) -> list[str]:
        prefix = path + PATH_SEP
        return [leaf for leaf in self.col_leaves if leaf == path or leaf.startswith(prefix)]


def vocabulary(triples: Iterable[Triple]) -> Vocabulary:
    triples = list(triples)
    children: dict[str, list[str]] = {}
    for t in triples:
        if t.relation == HAS_CHILD:
            children.setdefault(t.subject, []).append(t.object)
    voc = Vocabulary()

    def walk(label: str, prefix: tuple[str, ...], axis: str):
        path = prefix + (label,)
        kids = children.get(label, [])
        if axis == "col":
            joined = PATH_SEP.join(path)
            voc.col_paths[joined] = path
            if not kids:
                voc.col_leaves.append(joined)
        else:
            voc.row_labels.setdefault(label, path)
            voc.row_leaf[label] = not kids
        for kid in kids:
            if kid not in path:
                walk(kid, path, axis)

    for t in triples:
        if t.relation == HAS_COLUMN_HEADER:
            walk(t.object, (), "col")
        elif t.relation == HAS_ROW_HEADER:
            walk(t.object, (), "row")
    return voc


def select_operations(agent, subqueries: Sequence[str], triples: Sequence[Triple]) -> list[OperatorInstance]:
    """Ask the agent for operator instances and keep the ones grounded in the table.

    Instances whose descriptors fall outside the triples' vocabulary (plus
    names introduced by other selected instances) are dropped with a warning.
    """
    if not subqueries:
        raise ValueError("at least one subquery is required")
    if not triples:
        raise ValueError("triples must be non-empty")
    proposed = agent.choose_ops(list(subqueries), list(triples))
    vocab = vocabulary(triples).descriptors()
    kept = list(proposed)
    while True:
        produced = {name for op in kept for name in op.outputs()}
        still = []
        for op in kept:
            unknown = [d for d in op.descriptors() if d not in vocab and d not in produced]
            if unknown:
                logger.warning("dropping %s: unknown descriptors %s", op.signature, unknown)
            else:
                still.append(op)
        if len(still) == len(kept):
            break
        kept = still
    if not kept:
        raise EmptySelection("no proposed operation references known descriptors")
    return kept
