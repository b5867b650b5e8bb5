from __future__ import annotations

import random

import mpmath
import pytest
from _harness import executor_case_agrees, numeric_columns, sum_is_conserved
from _oracles import random_view
from hypothesis import given, settings
from hypothesis import strategies as st

from tabresearch.agent import CallBudget, mock_agent
from tabresearch.errors import (
    BudgetExhausted,
    DuplicatePivotKey,
    EmptyAggregate,
    OperatorError,
    TerminalState,
    TypeMismatch,
    UnknownDescriptor,
)
from tabresearch.executor import (
    CODE,
    THINK,
    ChartSpec,
    ExecState,
    Feedback,
    Grouped,
    RecordList,
    RewardWeights,
    Scalar,
    StepTrace,
    VirtualClock,
    apply_operator,
    check_type,
    compute_reward,
    outcome_json,
    render_trace,
    run_path,
    to_outcome,
)
from tabresearch.opbank import (
    Agg,
    Chart,
    Clean,
    Derive,
    Filter,
    Group,
    Join,
    Limit,
    Load,
    Path,
    Pivot,
    Sort,
)
from tabresearch.structure import DataView, Record, analyze
from tabresearch.table import NULL_VALUE, Integer, Real, Text, ingest_csv

TOTAL = Derive("total", "[Sales/Q1] + [Sales/Q2] + [Sales/Q3]")


@pytest.fixture
def f1_view(f1_grid):
    return analyze(f1_grid).view


def run_ops(view, *ops):
    state = ExecState.start(view)
    for op in ops:
        state = apply_operator(op, state)
    return state


def test_filter_north(f1_view):
    state = run_ops(f1_view, Load(), Filter("@row", "==", "North"))
    assert [r.row for r in state.view.records] == ["North"]


def test_group_sum_of_derived_total(f1_view):
    state = run_ops(f1_view, Load(), TOTAL, Group("@row"), Agg("sum", "total"))
    out = to_outcome(state)
    assert isinstance(out, Grouped)
    assert {k: v.value for k, v in out.groups.items()} == {"North": 60, "South": 45}


def test_missing_descriptor(f1_view):
    with pytest.raises(UnknownDescriptor) as err:
        run_ops(f1_view, Filter("category", "notnull"))
    assert "category not found" in str(err.value)


def test_null_never_matches_and_sort_puts_nulls_last():
    view = analyze(ingest_csv("k,v\na,3\nb,\nc,1\nd,2")).view
    kept = run_ops(view, Filter("v", "!=", 99))
    assert [r.row for r in kept.view.records] == ["a", "c", "d"]
    for direction, expected in (("asc", ["c", "d", "a", "b"]), ("desc", ["a", "d", "c", "b"])):
        state = run_ops(view, Sort("v", direction))
        assert [r.row for r in state.view.records] == expected


def test_comparator_type_errors():
    view = DataView(tuple(Record(k, {"v": v, "t": Text(t)}) for k, v, t in
                          (("a", Integer(3), "p"), ("b", Text("x"), "q"), ("c", Integer(4), "r"))),
                    ("v", "t"))
    with pytest.raises(TypeMismatch):
        run_ops(view, Filter("v", ">", 1))
    with pytest.raises(TypeMismatch):
        run_ops(view, Filter("v", "contains", "x"))
    assert len(run_ops(view, Filter("t", "contains", "q")).view) == 1


def test_aggregate_rules():
    view = analyze(ingest_csv("k,v,w\na,1,\nb,,\nc,2.5,")).view
    assert run_ops(view, Agg("sum", "v")).scalar == Real(3.5)
    assert run_ops(view, Agg("count", "v")).scalar == Integer(2)
    assert run_ops(view, Agg("mean", "v")).scalar == Real(1.75)
    assert run_ops(view, Agg("sum", "w")).scalar == Integer(0)
    with pytest.raises(EmptyAggregate):
        run_ops(view, Agg("mean", "w"))
    with pytest.raises(EmptyAggregate):
        run_ops(view, Agg("max", "w"))
    with pytest.raises(TypeMismatch):
        run_ops(view, Agg("sum", "k"))


def test_scalar_state_rejects_further_ops(f1_view):
    with pytest.raises(TypeMismatch):
        run_ops(f1_view, Agg("sum", "Sales/Q1"), Sort("Sales/Q1", "asc"))


def test_limit_and_clean():
    view = analyze(ingest_csv("k,v,w\na,1,5\nb,,6\nc,x,7")).view
    assert len(run_ops(view, Limit(2)).view) == 2
    assert len(run_ops(view, Clean("drop_null_rows")).view) == 2
    filled = run_ops(view, Clean("fill_zero"))
    assert filled.view.records[1].values["v"] == Integer(0)
    coerced = run_ops(view, Clean("coerce_numeric"))
    assert coerced.view.records[2].values["v"].is_null


def test_derive_arithmetic_and_nulls():
    view = analyze(ingest_csv("k,a,b\nx,6,3\ny,1,0\nz,,2")).view
    state = run_ops(view, Derive("r", "[a] / [b] - 1"))
    assert [r.values["r"] for r in state.view.records] == [Real(1.0), NULL_VALUE, NULL_VALUE]
    with pytest.raises(TypeMismatch):
        run_ops(view, Derive("bad", "__import__('os')"))
    with pytest.raises(TypeMismatch):
        run_ops(view, Derive("a", "[b]"))


def test_join_inner_equi():
    left = analyze(ingest_csv("k,v\na,1\nb,2\nc,3")).view
    right = analyze(ingest_csv("k,w\nb,20\nc,30\nd,40")).view
    state = apply_operator(Join("R", "k", "k"), ExecState.start(left, {"R": right}))
    assert [(r.values["k"].value, r.values["w"].value) for r in state.view.records] == \
        [("b", 20), ("c", 30)]
    with pytest.raises(UnknownDescriptor):
        apply_operator(Join("missing", "k", "k"), ExecState.start(left))


def test_pivot_and_duplicates():
    view = analyze(ingest_csv("r,c,v\nx,p,1\nx,q,2\ny,p,3")).view
    state = run_ops(view, Pivot("r", "c", "v"))
    assert state.view.col_descriptors == ("p", "q")
    assert state.view.records[1].values["q"].is_null
    dup = analyze(ingest_csv("r,c,v\nx,p,1\nx,p,2")).view
    with pytest.raises(DuplicatePivotKey):
        run_ops(dup, Pivot("r", "c", "v"))


def test_chart_terminal(f1_view):
    state = run_ops(f1_view, Chart("bar", "Region", "Sales/Q2"))
    spec = to_outcome(state)
    assert spec.to_json() == {"kind": "bar", "x": "Region", "series": ["Sales/Q2"]}
    assert outcome_json(spec)["type"] == "chart"
    with pytest.raises(TerminalState):
        apply_operator(Limit(1), state)


def test_check_type_examples(f1_view):
    records = RecordList(f1_view)
    assert check_type(records, Path((Load(), Sort("Sales/Q1", "asc")))) == 1
    assert check_type(records, Path((Load(), Agg("sum", "Sales/Q1")))) == 0
    bad = ChartSpec("bar", "Region", ("nope",), f1_view.descriptors())
    assert check_type(bad, Path((Load(), Chart("bar", "Region", "nope")))) == 0
    good = ChartSpec("bar", "Region", ("Sales/Q1",), f1_view.descriptors())
    assert check_type(good, "CHART") == 1
    assert check_type(Scalar(Integer(1)), "AGG") == 1
    # shape-preserving steps defer to the previous shape-determining one
    assert check_type(Scalar(Integer(1)), Path((Load(), Agg("sum", "x"), Filter("y", "notnull")))) == 1


def test_reward_examples():
    assert compute_reward(Feedback(0, 1.0, 0)) == 0.0
    assert compute_reward(Feedback(1, 1e-12, 1)) == pytest.approx(1.0, abs=1e-12)
    mpmath.mp.dps = 30
    oracle = float(mpmath.mpf("0.7") + mpmath.mpf("0.2") + mpmath.mpf("0.1") * mpmath.exp(-1))
    assert oracle == pytest.approx(0.936787944117144, rel=1e-15)
    assert compute_reward(Feedback(1, 10.0, 1)) == pytest.approx(oracle, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1e4), st.floats(1e-9, 1e4), st.sampled_from([0, 1]), st.floats(0.1, 5))
def test_reward_bounded_and_monotone_in_time(t1, t2, f_type, r_max):
    lo, hi = sorted((t1, t2))
    a = compute_reward(Feedback(1, lo, f_type), r_max=r_max)
    b = compute_reward(Feedback(1, hi, f_type), r_max=r_max)
    assert 0 <= b <= a <= r_max


def test_feedback_invariants():
    with pytest.raises(ValueError):
        Feedback(0, 1.0, 1)
    with pytest.raises(ValueError):
        Feedback(1, 0.0, 1)
    with pytest.raises(ValueError):
        RewardWeights(0.5, 0.2, 0.1)


def test_step_trace_invariants():
    with pytest.raises(ValueError):
        StepTrace(CODE, "x")
    with pytest.raises(ValueError):
        StepTrace(THINK, "x", op=Load())
    trace = [StepTrace(THINK, "plan"), StepTrace(CODE, "LOAD", Load(), "view 2x4")]
    assert render_trace(trace) == "[THINK] plan\n[CODE] LOAD ⇒ view 2x4"


def test_run_path_success(f1_view):
    path = Path((Load(), TOTAL, Filter("@row", "==", "North"), Group("@row"), Agg("sum", "total")))
    budget = CallBudget(10)
    outcome, fb, trace = run_path(path, f1_view, mock_agent(0), budget, clock=VirtualClock())
    assert {k: v.value for k, v in outcome.groups.items()} == {"North": 60}
    assert (fb.f_exec, fb.f_type, fb.f_time) == (1, 1, 5.0)
    assert [s.flag for s in trace] == [THINK, CODE] * 5
    assert budget.used == 5


def test_run_path_failure_halts(f1_view):
    path = Path((Load(), Filter("category", "notnull"), Agg("sum", "Sales/Q1")))
    outcome, fb, trace = run_path(path, f1_view, mock_agent(0), 0, clock=VirtualClock())
    assert outcome is None and (fb.f_exec, fb.f_type) == (0, 0)
    assert compute_reward(fb) == 0.0
    assert [s.flag for s in trace] == [CODE, CODE]
    assert trace[-1].outcome_digest.startswith("error: UnknownDescriptor")


def test_run_path_budget_exhaustion(f1_view):
    path = Path((Load(), Filter("Sales/Q1", "notnull"), Agg("sum", "Sales/Q1")))
    budget = CallBudget(1)
    with pytest.raises(BudgetExhausted):
        run_path(path, f1_view, mock_agent(0), budget)
    assert budget.used == 1


def test_wall_clock_time_positive(f1_view):
    _, fb, _ = run_path(Path((Load(),)), f1_view, mock_agent(0), 0)
    assert fb.f_time > 0


# properties ---------------------------------------------------------------------------------


def _views():
    return st.integers(0, 10_000).map(lambda s: random_view(random.Random(s)))


@settings(max_examples=100, deadline=None)
@given(_views(), st.integers(0, 10_000))
def test_filter_subset_order_preserving(view, seed):
    rng = random.Random(seed)
    if not view.records:
        return
    col = rng.choice(view.columns)
    try:
        out = run_ops(view, Filter(col, rng.choice(("==", "!=", "notnull")), view.records[0].values[col]))
    except OperatorError:
        return
    ids = [id(r) for r in view.records]
    positions = [ids.index(id(r)) for r in out.view.records]
    assert positions == sorted(positions)


@settings(max_examples=100, deadline=None)
@given(_views(), st.integers(0, 10_000))
def test_group_partition(view, seed):
    col = random.Random(seed).choice(("@row",) + view.columns)
    state = run_ops(view, Group(col))
    assert sum(len(g.records) for g in state.groups.values()) == len(view)
    assert len(set(state.groups)) == len(state.groups)


@settings(max_examples=100, deadline=None)
@given(_views(), st.integers(0, 10_000), st.sampled_from(["asc", "desc"]))
def test_sort_permutation_sorted_and_stable(view, seed, direction):
    col = random.Random(seed).choice(view.columns)
    try:
        out = run_ops(view, Sort(col, direction)).view.records
    except TypeMismatch:
        return
    assert sorted(map(id, out)) == sorted(map(id, view.records))
    vals = [r.values[col] for r in out]
    present = [v for v in vals if not v.is_null]
    assert all(v.is_null for v in vals[len(present):])
    original = {id(r): i for i, r in enumerate(view.records)}
    for (a, ra), (b, rb) in zip(zip(present, out), zip(present[1:], out[1:])):
        if direction == "asc":
            assert a.value <= b.value
        else:
            assert a.value >= b.value
        if a.value == b.value:
            assert original[id(ra)] < original[id(rb)]


@settings(max_examples=100, deadline=None)
@given(_views(), st.integers(0, 10_000))
def test_sum_conservation(view, seed):
    rng = random.Random(seed)
    numeric = numeric_columns(view)
    if numeric:
        assert sum_is_conserved(view, rng.choice(("@row",) + view.columns), rng.choice(numeric))


@pytest.mark.parametrize("block", range(4))
def test_oracle_equivalence(block):
    failures = [s for s in range(block * 50, block * 50 + 50) if not executor_case_agrees(s)]
    assert not failures


def test_grouped_outcome_serialises(f1_view):
    out = to_outcome(run_ops(f1_view, Group("@row")))
    doc = outcome_json(out)
    assert doc["type"] == "grouped" and set(doc["groups"]) == {"North", "South"}


def test_record_views_are_immutable_inputs(f1_view):
    before = f1_view.to_json()
    run_ops(f1_view, Load(), TOTAL, Sort("total", "desc"), Limit(1))
    assert f1_view.to_json() == before


def test_manual_dataview_records():
    view = DataView((Record("a", {"x": Text("p")}), Record("b", {"x": Text("q")})), ("x",))
    assert [r.row for r in run_ops(view, Sort("x", "desc")).view.records] == ["b", "a"]
