"""Stepwise execution of operator paths over a :class:`DataView`.

Every operator maps an :class:`ExecState` to a new one. :func:`run_path`
interleaves agent ``[THINK]`` steps with ``[CODE]`` steps, stops at the first
operator error, and reports the feedback tuple ``(f_exec, f_time, f_type)``
that :func:`compute_reward` turns into a bounded scalar reward.
"""

from __future__ import annotations

import ast
import math
import operator
import time
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .errors import (
    DuplicatePivotKey,
    EmptyAggregate,
    OperatorError,
    TerminalState,
    TypeMismatch,
    UnknownDescriptor,
)
from .opbank import (
    CHART_KINDS,
    K,
    OperatorInstance,
    OperatorKind,
    Path,
    agg_output,
    expr_refs,
)
from .structure import ROW_KEY, DataView, Record, disambiguate
from .table import (
    BOOL,
    INTEGER,
    NULL_VALUE,
    REAL,
    TEXT,
    CellValue,
    Integer,
    Real,
)

THINK = "THINK"
CODE = "CODE"
MIN_TIME = 1e-9


# outcomes ------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    x: str
    series: tuple[str, ...]
    available: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def well_formed(self) -> bool:
        names = set(self.available)
        return (self.kind in CHART_KINDS and bool(self.series)
                and self.x in names and all(s in names for s in self.series))

    def to_json(self) -> dict:
        return {"kind": self.kind, "x": self.x, "series": list(self.series)}


@dataclass(frozen=True)
class Scalar:
    value: CellValue

    def to_json(self) -> dict:
        return {"type": "scalar", "value": self.value.to_json(), "unit": self.value.unit}


@dataclass(frozen=True)
class RecordList:
    view: DataView

    def to_json(self) -> dict:
        return {"type": "records", **self.view.to_json()}


@dataclass(frozen=True)
class Grouped:
    """Group key -> scalar aggregate, or group key -> member records."""

    groups: Mapping[str, Any]

    def scalars(self) -> bool:
        return all(isinstance(v, CellValue) for v in self.groups.values())

    def to_json(self) -> dict:
        out = {}
        for key, v in self.groups.items():
            out[key] = v.to_json() if isinstance(v, CellValue) else v.to_json()["records"]
        return {"type": "grouped", "groups": out}


def outcome_json(outcome) -> dict:
    if isinstance(outcome, ChartSpec):
        return {"type": "chart", **outcome.to_json()}
    return outcome.to_json()


# state ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Bucket:
    key: tuple[CellValue, ...]
    records: tuple[Record, ...]


@dataclass(frozen=True)
class StepTrace:
    flag: str
    content: str
    op: OperatorInstance | None = None
    outcome_digest: str = ""
    elapsed: float = 0.0

    def __post_init__(self):
        if self.flag not in (THINK, CODE):
            raise ValueError("flag must be THINK or CODE")
        if (self.flag == CODE) != (self.op is not None):
            raise ValueError("CODE steps carry an op; THINK steps do not")

    def render(self) -> str:
        if self.flag == THINK:
            return f"[THINK] {self.content}"
        return f"[CODE] {self.op.signature} ⇒ {self.outcome_digest}"

    def to_json(self) -> dict:
        return {"flag": self.flag, "content": self.content,
                "op": self.op.to_json() if self.op else None,
                "outcome": self.outcome_digest, "elapsed": self.elapsed}


def render_trace(trace: Sequence[StepTrace]) -> str:
    return "\n".join(s.render() for s in trace)


@dataclass(frozen=True)
class ExecState:
    view: DataView | None = None
    source: DataView | None = None
    groups: Mapping[str, Bucket] | None = None
    group_keys: tuple[str, ...] = ()
    scalar: CellValue | None = None
    chart: ChartSpec | None = None
    agg_column: str | None = None
    aux: Mapping[str, DataView] = field(default_factory=dict)
    trace: tuple[StepTrace, ...] = ()

    @classmethod
    def start(cls, view: DataView, aux: Mapping[str, DataView] | None = None) -> "ExecState":
        return cls(view=view, source=view, aux=dict(aux or {}))

    @property
    def terminal(self) -> bool:
        return self.chart is not None

    def records(self) -> list[Record]:
        if self.groups is not None:
            return [r for g in self.groups.values() for r in g.records]
        return list(self.view.records) if self.view is not None else []

    def digest(self) -> str:
        if self.chart is not None:
            return f"chart {self.chart.kind} x={self.chart.x} series={','.join(self.chart.series)}"
        if self.scalar is not None:
            return f"scalar {self.scalar}"
        if self.groups is not None:
            return f"groups {len(self.groups)} over {len(self.records())} records"
        if self.view is not None:
            tag = "aggregated " if self.agg_column else ""
            return f"{tag}view {len(self.view)}x{len(self.view.columns)}"
        return "unbound"


# value helpers -------------------------------------------------------------------------


def _family(v: CellValue) -> str:
    return "number" if v.kind in (INTEGER, REAL) else v.kind


def _key(v: CellValue):
    return v.value


def compare(value: CellValue, comparator: str, literal: CellValue) -> bool:
    """FILTER predicate. Null never satisfies any comparator."""
    if value.is_null:
        return False
    if comparator == "notnull":
        return True
    if comparator == "contains":
        if value.kind != TEXT:
            raise TypeMismatch(f"contains needs text, got {value.kind}")
        return literal.text() in value.value
    if literal.is_null:
        if comparator in ("==", "!="):
            return False
        raise TypeMismatch("ordering comparison against null")
    same = _family(value) == _family(literal)
    if comparator == "==":
        return same and value.value == literal.value
    if comparator == "!=":
        return not (same and value.value == literal.value)
    if not same or value.kind == BOOL:
        raise TypeMismatch(f"cannot order {value.kind} against {literal.kind}")
    ops = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}
    return ops[comparator](value.value, literal.value)


def _common_unit(values: Sequence[CellValue]) -> str | None:
    units = {v.unit for v in values}
    return units.pop() if len(units) == 1 else None


def aggregate(function: str, values: Sequence[CellValue]) -> CellValue:
    nonnull = [v for v in values if not v.is_null]
    if function == "count":
        return Integer(len(nonnull))
    if function in ("sum", "mean"):
        bad = [v for v in nonnull if not v.is_numeric]
        if bad:
            raise TypeMismatch(f"{function} over non-numeric {bad[0].kind} value")
        unit = _common_unit(nonnull)
        if function == "sum":
            if all(v.kind == INTEGER for v in nonnull):
                return Integer(sum(v.value for v in nonnull), unit)
            return Real(math.fsum(v.value for v in nonnull), unit)
        if not nonnull:
            raise EmptyAggregate("mean of zero non-null values")
        return Real(math.fsum(v.value for v in nonnull) / len(nonnull), unit)
    if not nonnull:
        raise EmptyAggregate(f"{function} of zero non-null values")
    families = {_family(v) for v in nonnull}
    if len(families) > 1 or BOOL in families:
        raise TypeMismatch(f"{function} over mixed kinds {sorted(families)}")
    pick = min if function == "min" else max
    return pick(nonnull, key=_key)


# expressions for DERIVE ------------------------------------------------------------------


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv}


def _compile(expr: str):
    refs = expr_refs(expr)
    text = expr
    names = {}
    for i, ref in enumerate(dict.fromkeys(refs)):
        text = text.replace(f"[{ref}]", f"_v{i}")
        names[f"_v{i}"] = ref
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise TypeMismatch(f"unparseable expression {expr!r}") from exc
    for node in ast.walk(tree):
        ok = isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Name, ast.Load,
                               ast.USub, ast.UAdd, *_BINOPS))
        ok = ok or (isinstance(node, ast.Constant) and type(node.value) in (int, float))
        if not ok or (isinstance(node, ast.Name) and node.id not in names):
            raise TypeMismatch(f"unsupported expression {expr!r}")
    return tree.body, names


def _evaluate(node, env: Mapping[str, CellValue]):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        v = env[node.id]
        if v.is_null:
            return None
        if not v.is_numeric:
            raise TypeMismatch(f"arithmetic over {v.kind} value")
        return v.value
    if isinstance(node, ast.UnaryOp):
        x = _evaluate(node.operand, env)
        return None if x is None else (-x if isinstance(node.op, ast.USub) else x)
    a, b = _evaluate(node.left, env), _evaluate(node.right, env)
    if a is None or b is None:
        return None
    if isinstance(node.op, ast.Div) and b == 0:
        return None
    return _BINOPS[type(node.op)](a, b)


# operators -------------------------------------------------------------------------------


def _require(view: DataView, *names: str) -> None:
    for name in names:
        if not view.has(name):
            raise UnknownDescriptor(name, view.descriptors())


def _working_view(state: ExecState, op: OperatorInstance) -> DataView:
    if state.scalar is not None:
        raise TypeMismatch(f"{op.kind.value} cannot apply to a scalar")
    if state.view is None:
        raise TypeMismatch("no view bound")
    return state.view


def _with_records(view: DataView, records) -> DataView:
    return replace(view, records=tuple(records))


def _apply_load(op, state):
    return state if state.view is not None or state.groups is not None else replace(state, view=state.source)


def _apply_clean(op, state):
    view = _working_view(state, op)
    policy = op["policy"]
    cols = view.col_descriptors

    def fix(rec: Record) -> Record | None:
        if policy == "drop_null_rows":
            return None if any(rec.values[c].is_null for c in cols) else rec
        values = dict(rec.values)
        for c in cols:
            v = values[c]
            if policy == "fill_zero" and v.is_null:
                values[c] = Integer(0)
            elif policy == "coerce_numeric" and v.kind == TEXT:
                values[c] = _coerce(v.value)
        return Record(rec.row, values)

    if state.groups is not None:
        groups = {k: Bucket(g.key, tuple(r for r in map(fix, g.records) if r is not None))
                  for k, g in state.groups.items()}
        return replace(state, groups={k: g for k, g in groups.items() if g.records})
    return replace(state, view=_with_records(view, [r for r in map(fix, view.records) if r is not None]))


def _coerce(raw: str) -> CellValue:
    from .table import infer_value

    v = infer_value(raw.replace(",", "").replace(" ", ""))
    return v if v.is_numeric else NULL_VALUE


def _apply_filter(op, state):
    view = _working_view(state, op)
    desc, cmp, lit = op["descriptor"], op["comparator"], op["literal"]
    _require(view, desc)
    keep = lambda rec: compare(rec.get(desc), cmp, lit)  # noqa: E731
    if state.groups is not None:
        groups = {k: Bucket(g.key, tuple(r for r in g.records if keep(r)))
                  for k, g in state.groups.items()}
        return replace(state, groups={k: g for k, g in groups.items() if g.records})
    return replace(state, view=_with_records(view, [r for r in view.records if keep(r)]))


def _apply_group(op, state):
    view = _working_view(state, op)
    keys = tuple(op["descriptors"])
    _require(view, *keys)
    groups: dict[str, Bucket] = {}
    for rec in state.records():
        kv = tuple(rec.get(k) for k in keys)
        label = "/".join(v.text() for v in kv)
        if label in groups:
            groups[label] = Bucket(kv, groups[label].records + (rec,))
        else:
            groups[label] = Bucket(kv, (rec,))
    return replace(state, groups=groups, group_keys=keys, agg_column=None)


def _apply_agg(op, state):
    view = _working_view(state, op)
    fn, measure = op["function"], op["measure"]
    _require(view, measure)
    out = agg_output(fn, measure)
    if state.groups is None:
        return replace(state, scalar=aggregate(fn, view.column(measure)), view=None)
    key_names = tuple(n for n in state.group_keys if n != ROW_KEY)
    records = []
    for label, g in state.groups.items():
        values = {}
        for name, v in zip(state.group_keys, g.key):
            if name != ROW_KEY:
                values[name] = v
        values[out] = aggregate(fn, [r.get(measure) for r in g.records])
        records.append(Record(label, values))
    agg_view = DataView(tuple(records), (out,), key_names)
    return replace(state, view=agg_view, groups=None, group_keys=(), agg_column=out)


def _sorted(records, desc: str, direction: str):
    nonnull = [r for r in records if not r.get(desc).is_null]
    nulls = [r for r in records if r.get(desc).is_null]
    families = {_family(r.get(desc)) for r in nonnull}
    if len(families) > 1:
        raise TypeMismatch(f"cannot sort mixed kinds {sorted(families)}")
    return sorted(nonnull, key=lambda r: _key(r.get(desc)), reverse=direction == "desc") + nulls


def _apply_sort(op, state):
    view = _working_view(state, op)
    desc, direction = op["descriptor"], op["direction"]
    _require(view, desc)
    if state.groups is not None:
        groups = {k: Bucket(g.key, tuple(_sorted(g.records, desc, direction)))
                  for k, g in state.groups.items()}
        return replace(state, groups=groups)
    return replace(state, view=_with_records(view, _sorted(view.records, desc, direction)),
                   agg_column=None)


def _apply_limit(op, state):
    _working_view(state, op)
    k = op["k"]
    if state.groups is not None:
        return replace(state, groups=dict(list(state.groups.items())[:k]))
    return replace(state, view=_with_records(state.view, state.view.records[:k]), agg_column=None)


def _apply_derive(op, state):
    view = _working_view(state, op)
    name, expr = op["name"], op["expr"]
    body, names = _compile(expr)
    _require(view, *names.values())
    if view.has(name):
        raise TypeMismatch(f"derived descriptor {name!r} already exists")

    def extend(rec: Record) -> Record:
        env = {k: rec.get(ref) for k, ref in names.items()}
        x = _evaluate(body, env)
        if x is None:
            v = NULL_VALUE
        elif isinstance(x, int):
            v = Integer(x)
        elif math.isfinite(x):
            v = Real(x)
        else:
            v = NULL_VALUE
        return Record(rec.row, {**rec.values, name: v})

    new_view = DataView(tuple(map(extend, view.records)), view.col_descriptors + (name,),
                        view.dim_descriptors)
    if state.groups is not None:
        groups = {k: Bucket(g.key, tuple(map(extend, g.records))) for k, g in state.groups.items()}
        return replace(state, view=new_view, groups=groups)
    return replace(state, view=new_view)


def _apply_join(op, state):
    view = _working_view(state, op)
    if state.groups is not None:
        raise TypeMismatch("JOIN over grouped records")
    right = state.aux.get(op["view"])
    if right is None:
        raise UnknownDescriptor(op["view"], tuple(state.aux))
    lk, rk = op["left_key"], op["right_key"]
    _require(view, lk)
    _require(right, rk)
    r_dims = [c for c in right.dim_descriptors if c != rk]
    r_cols = [c for c in right.col_descriptors if c != rk]
    names = disambiguate(list(view.columns) + r_dims + r_cols)
    left_n = len(view.columns)
    dim_names = names[:len(view.dim_descriptors)] + names[left_n:left_n + len(r_dims)]
    col_names = names[len(view.dim_descriptors):left_n] + names[left_n + len(r_dims):]
    rename_left = dict(zip(view.columns, names[:left_n]))
    rename_right = dict(zip(r_dims + r_cols, names[left_n:]))
    records = []
    for lrec in view.records:
        lv = lrec.get(lk)
        for rrec in right.records:
            rv = rrec.get(rk)
            if lv.is_null or rv.is_null or _family(lv) != _family(rv) or lv.value != rv.value:
                continue
            values = {rename_left[c]: lrec.values[c] for c in view.columns}
            values.update({rename_right[c]: rrec.get(c) for c in r_dims + r_cols})
            records.append(Record(lrec.row, values))
    return replace(state, view=DataView(tuple(records), tuple(col_names), tuple(dim_names)),
                   agg_column=None)


def _apply_pivot(op, state):
    view = _working_view(state, op)
    if state.groups is not None:
        raise TypeMismatch("PIVOT over grouped records")
    rd, cd, md = op["row"], op["col"], op["measure"]
    _require(view, rd, cd, md)
    row_keys: dict[str, CellValue] = {}
    col_keys: list[str] = []
    cells: dict[tuple[str, str], CellValue] = {}
    for rec in view.records:
        rk, ck = rec.get(rd).text(), rec.get(cd).text()
        if (rk, ck) in cells:
            raise DuplicatePivotKey(f"duplicate ({rk}, {ck})")
        cells[(rk, ck)] = rec.get(md)
        row_keys.setdefault(rk, rec.get(rd))
        if ck not in col_keys:
            col_keys.append(ck)
    col_names = disambiguate(col_keys)
    dim = rd if rd != ROW_KEY else "row"
    records = []
    for rk, rv in row_keys.items():
        values = {dim: rv}
        for ck, name in zip(col_keys, col_names):
            values[name] = cells.get((rk, ck), NULL_VALUE)
        records.append(Record(rk, values))
    return replace(state, view=DataView(tuple(records), tuple(col_names), (dim,)), agg_column=None)


def _apply_chart(op, state):
    view = _working_view(state, op)
    if state.groups is not None:
        raise TypeMismatch("CHART needs a flat view; aggregate groups first")
    _require(view, op["x"], *op["series"])
    spec = ChartSpec(op["chart"], op["x"], tuple(op["series"]), view.descriptors())
    return replace(state, chart=spec)


_APPLY = {
    K.LOAD: _apply_load, K.CLEAN: _apply_clean, K.FILTER: _apply_filter, K.GROUP: _apply_group,
    K.AGG: _apply_agg, K.SORT: _apply_sort, K.LIMIT: _apply_limit, K.DERIVE: _apply_derive,
    K.JOIN: _apply_join, K.PIVOT: _apply_pivot, K.CHART: _apply_chart,
}


def apply_operator(op: OperatorInstance, state: ExecState) -> ExecState:
    """Apply one operator; raises an :class:`OperatorError` subclass on failure."""
    if state.terminal:
        raise TerminalState(f"{op.kind} after CHART")
    return _APPLY[op.kind](op, state)


def to_outcome(state: ExecState):
    if state.chart is not None:
        return state.chart
    if state.scalar is not None:
        return Scalar(state.scalar)
    if state.groups is not None:
        return Grouped({k: RecordList(DataView(g.records, state.view.col_descriptors,
                                               state.view.dim_descriptors))
                        for k, g in state.groups.items()})
    if state.agg_column is not None:
        return Grouped({r.row: r.values[state.agg_column] for r in state.view.records})
    return RecordList(state.view)


# shape checks and reward ---------------------------------------------------------------------

SCALAR_OR_GROUPED = "scalar_or_grouped"
RECORDS = "records"
GROUPED_RECORDS = "grouped_records"
CHART = "chart"

_SHAPE = {
    K.AGG: SCALAR_OR_GROUPED, K.SORT: RECORDS, K.LIMIT: RECORDS, K.LOAD: RECORDS,
    K.JOIN: RECORDS, K.PIVOT: RECORDS, K.GROUP: GROUPED_RECORDS, K.CHART: CHART,
}
_SHAPE_PRESERVING = (K.FILTER, K.CLEAN, K.DERIVE)


def expected_shape(path_or_kind) -> str:
    """Output shape implied by the last shape-determining operator."""
    if isinstance(path_or_kind, (OperatorKind, str)):
        kinds = [OperatorKind(path_or_kind)]
    else:
        kinds = [op.kind for op in path_or_kind]
    for kind in reversed(kinds):
        if kind not in _SHAPE_PRESERVING:
            return _SHAPE[kind]
    return RECORDS


def check_type(outcome, expectation) -> int:
    """1 when ``outcome`` has the shape implied by ``expectation`` (a kind,
    a path, or a shape name), else 0."""
    if expectation in (SCALAR_OR_GROUPED, RECORDS, GROUPED_RECORDS, CHART):
        shape = expectation
    else:
        shape = expected_shape(expectation)
    if outcome is None:
        return 0
    if shape == SCALAR_OR_GROUPED:
        ok = isinstance(outcome, Scalar) or (isinstance(outcome, Grouped) and outcome.scalars())
    elif shape == RECORDS:
        ok = isinstance(outcome, RecordList)
    elif shape == GROUPED_RECORDS:
        ok = isinstance(outcome, Grouped) and not outcome.scalars()
    else:
        ok = isinstance(outcome, ChartSpec) and outcome.well_formed()
    return int(ok)


@dataclass(frozen=True)
class Feedback:
    f_exec: int
    f_time: float
    f_type: int

    def __post_init__(self):
        if self.f_exec not in (0, 1) or self.f_type not in (0, 1):
            raise ValueError("f_exec and f_type are binary")
        if not self.f_time > 0:
            raise ValueError("f_time must be positive")
        if self.f_exec == 0 and self.f_type != 0:
            raise ValueError("f_type must be 0 when execution failed")

    def to_json(self) -> dict:
        return {"f_exec": self.f_exec, "f_time": self.f_time, "f_type": self.f_type}


@dataclass(frozen=True)
class RewardWeights:
    w_base: float = 0.7
    w_type: float = 0.2
    w_time: float = 0.1
    tau: float = 10.0

    def __post_init__(self):
        if abs(self.w_base + self.w_type + self.w_time - 1.0) > 1e-12:
            raise ValueError("reward weights must sum to 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def compute_reward(feedback: Feedback, weights: RewardWeights = RewardWeights(),
                   r_max: float = 1.0) -> float:
    if feedback.f_exec == 0:
        return 0.0
    w = weights
    r = r_max * (w.w_base + w.w_type * feedback.f_type
                 + w.w_time * math.exp(-feedback.f_time / w.tau))
    return min(r, r_max)


# clocks and the run loop ------------------------------------------------------------------------


class WallClock:
    def now(self) -> float:
        return time.perf_counter()

    def step(self) -> None:
        pass


class VirtualClock:
    """Deterministic clock: one tick per executed operator."""

    def __init__(self, start: float = 0.0):
        self.t = start

    def now(self) -> float:
        return self.t

    def step(self) -> None:
        self.t += 1.0


def run_path(path: Path, view: DataView, agent, budget, *, clock=None,
             aux: Mapping[str, DataView] | None = None):
    """Execute ``path`` over ``view``.

    ``budget`` is a :class:`~tabresearch.agent.CallBudget` or an integer call
    limit; a zero limit disables THINK steps. Returns
    ``(outcome | None, Feedback, trace)``. Agent-side failures
    (:class:`BudgetExhausted`, :class:`AgentProtocolError`) propagate.
    """
    from .agent import CallBudget, Step, call

    if not isinstance(budget, CallBudget):
        budget = CallBudget(int(budget))
    clock = clock or WallClock()
    think = budget.limit > 0
    state = ExecState.start(view, aux)
    trace: list[StepTrace] = []
    start = clock.now()
    for op in path.ops:
        if think:
            t0 = clock.now()
            resp = call(agent, Step("before", render_trace(trace), op.signature, state.digest()),
                        budget)
            trace.append(StepTrace(THINK, resp.content, elapsed=clock.now() - t0))
        t0 = clock.now()
        try:
            state = apply_operator(op, state)
        except OperatorError as exc:
            clock.step()
            trace.append(StepTrace(CODE, op.signature, op,
                                   f"error: {type(exc).__name__}: {exc}", clock.now() - t0))
            return None, Feedback(0, max(clock.now() - start, MIN_TIME), 0), trace
        clock.step()
        trace.append(StepTrace(CODE, op.signature, op, state.digest(), clock.now() - t0))
    outcome = to_outcome(state)
    f_type = check_type(outcome, path)
    return outcome, Feedback(1, max(clock.now() - start, MIN_TIME), f_type), trace
