from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabresearch.agent import AgentSession, CallBudget, mock_agent
from tabresearch.errors import AgentProtocolError
from tabresearch.executor import VirtualClock, compute_reward, run_path
from tabresearch.memory import (
    ExecutionRecord,
    ExperienceNote,
    Insert,
    MemoryStore,
    RemapDescriptor,
    Remove,
    Reorder,
    abstract,
    adapt_candidates,
    edit_from_json,
    record,
    signature,
)
from tabresearch.opbank import (
    Agg,
    Filter,
    Group,
    Limit,
    Load,
    OperatorKind,
    Path,
    Sort,
    build_operation_map,
    respects,
)
from tabresearch.planner import PathStats, PlannerState
from tabresearch.structure import analyze


@pytest.fixture
def f1(f1_grid):
    return analyze(f1_grid)


def execute(path, view):
    outcome, fb, trace = run_path(path, view, mock_agent(0), 0, clock=VirtualClock())
    return fb, compute_reward(fb), trace


def test_one_record_per_operator(f1):
    path = Path((Load(), Filter("Sales/Q1", "notnull"), Group("@row"), Agg("sum", "Sales/Q1")))
    fb, reward, trace = execute(path, f1.view)
    store = record(MemoryStore(), path, fb, reward, trace)
    assert len(store) == 4
    assert all(r.path_signature == path.signature and r.reward == reward for r in store.records)
    assert store.records[0].context_digest == ""
    assert store.records[1].context_digest.startswith("[CODE] LOAD")


def test_failing_step_is_last_record(f1):
    path = Path((Load(), Filter("category", "notnull"), Agg("sum", "Sales/Q1")))
    fb, reward, trace = execute(path, f1.view)
    store = record(MemoryStore(), path, fb, reward, trace)
    assert len(store) == 2
    assert store.records[-1].outcome_digest.startswith("error: UnknownDescriptor")


def test_empty_trace_records_nothing():
    assert len(record(MemoryStore(), Path((Load(),)), None, 0.0, [])) == 0


def rec(sig: str, reward: float, outcome: str = "ok") -> ExecutionRecord:
    return ExecutionRecord(sig, Load(), "", outcome, reward)


def session():
    return AgentSession(mock_agent(0), CallBudget(5))


def test_abstract_reorder_note():
    recent = [rec("LOAD→AGG(sum,x)→FILTER(y,notnull,null)", 0.2),
              rec("LOAD→FILTER(y,notnull,null)→AGG(sum,x)", 0.9)]
    notes = abstract(session(), recent, "k")
    assert [n.edit for n in notes] == [Reorder("FILTER", "AGG")]
    assert all(n.pattern == "k" for n in notes)


def test_abstract_remap_note(f1):
    path = Path((Load(), Filter("category", "notnull"), Agg("sum", "Sales/Q1")))
    fb, reward, trace = execute(path, f1.view)
    store = record(MemoryStore(), path, fb, reward, trace)
    agent = session()
    notes = abstract(agent, store.records, "k")
    assert notes[0].edit == RemapDescriptor("category", "Region")
    assert agent.budget.used == 1


def test_abstract_single_success_yields_nothing():
    assert abstract(session(), [rec("LOAD→FILTER(y,notnull,null)", 0.9)], "k") == []


def test_abstract_requires_records():
    with pytest.raises(ValueError):
        abstract(session(), [], "k")


def test_abstract_rejects_malformed_notes():
    class Bad:
        def summarize(self, key, records):
            return [{"edit": None}]

    with pytest.raises(AgentProtocolError):
        abstract(Bad(), [rec("LOAD", 0.5)], "k")


def test_abstract_caps_at_three():
    class Chatty:
        def summarize(self, key, records):
            return [{"lesson": f"l{i}"} for i in range(7)]

    assert len(abstract(Chatty(), [rec("LOAD", 0.5)], "k")) == 3


AGG_FIRST = Path((Load(), Group("@row"), Agg("sum", "Sales/Q1"), Filter("@row", "==", "North")))


def test_adapt_reorder_adds_fresh_arm():
    notes = [ExperienceNote("k", "filter first", Reorder("FILTER", "AGG"))]
    state = PlannerState()
    state.ensure(AGG_FIRST, 1.0)
    paths, new_state = adapt_candidates([AGG_FIRST], notes, state)
    assert paths == [AGG_FIRST, Path((Load(), Group("@row"), Filter("@row", "==", "North"),
                                      Agg("sum", "Sales/Q1")))]
    assert paths[1].signature in new_state.stats and paths[1].signature not in state.stats
    assert new_state.stats[paths[1].signature] == PathStats(0.0, 0, 1.0)


def test_adapt_without_edits_is_identity():
    state = PlannerState()
    paths, out = adapt_candidates([AGG_FIRST], [ExperienceNote("k", "just words")], state)
    assert paths == [AGG_FIRST] and out is state


def test_adapt_remap():
    path = Path((Load(), Filter("category", "notnull"), Agg("sum", "category")))
    notes = [ExperienceNote("k", "x", RemapDescriptor("category", "Sales/Q3"))]
    paths, _ = adapt_candidates([path], notes, PlannerState())
    assert paths[1] == Path((Load(), Filter("Sales/Q3", "notnull"), Agg("sum", "Sales/Q3")))


def test_adapt_remove_replaces_original():
    path = Path((Load(), Sort("Sales/Q1", "asc"), Sort("Sales/Q2", "desc"), Limit(1)))
    paths, _ = adapt_candidates([path], [ExperienceNote("k", "x", Remove("SORT"))], PlannerState())
    assert paths == [Path((Load(), Sort("Sales/Q2", "desc"), Limit(1)))]


def test_adapt_insert():
    path = Path((Load(), Agg("sum", "Sales/Q1")))
    edit = Insert(Filter("Sales/Q1", "notnull"), "AGG")
    paths, _ = adapt_candidates([path], [ExperienceNote("k", "x", edit)], PlannerState())
    assert paths[1] == Path((Load(), Filter("Sales/Q1", "notnull"), Agg("sum", "Sales/Q1")))
    assert not edit.flags(paths[1])


def test_adapt_discards_edits_that_break_precedence():
    # moving AGG ahead of its GROUP would violate the map, so only the original survives
    path = Path((Load(), Group("@row"), Agg("sum", "Sales/Q1")))
    paths, _ = adapt_candidates([path], [ExperienceNote("k", "x", Reorder("AGG", "GROUP"))],
                                PlannerState())
    assert paths == [path]


_EDITS = [Reorder("FILTER", "AGG"), Reorder("SORT", "GROUP"), Remove("FILTER"),
          Insert(Filter("Sales/Q2", "notnull"), "AGG"), RemapDescriptor("Sales/Q1", "Sales/Q3")]
_OPS = [Filter("Sales/Q1", "notnull"), Filter("@row", "==", "North"), Group("@row"),
        Agg("sum", "Sales/Q1"), Sort("Sales/Q1", "desc"), Limit(1)]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(_OPS), min_size=1, max_size=5),
       st.lists(st.sampled_from(_EDITS), max_size=3))
def test_adapted_paths_respect_their_maps(ops, edits):
    path = Path((Load(), *ops))
    notes = [ExperienceNote("k", "x", e) for e in edits]
    paths, _ = adapt_candidates([path], notes, PlannerState())
    assert path in paths or any(isinstance(e, Remove) for e in edits)
    for q in paths:
        if q != path:
            assert respects(build_operation_map(q.ops), q)


@pytest.mark.parametrize("edit", _EDITS + [None])
def test_edit_json_round_trip(edit):
    doc = edit.to_json() if edit else None
    assert edit_from_json(json.loads(json.dumps(doc))) == edit


def test_unknown_edit_type():
    with pytest.raises(ValueError):
        edit_from_json({"type": "explode"})


def test_store_round_trip(f1):
    path = Path((Load(), Filter("Sales/Q1", "notnull")))
    fb, reward, trace = execute(path, f1.view)
    store = record(MemoryStore(), path, fb, reward, trace)
    store.add_notes("a|d2x1", [ExperienceNote("a|d2x1", "x", Reorder("FILTER", "AGG")),
                               ExperienceNote("a|d2x1", "y")])
    again = MemoryStore.loads(store.dumps())
    assert again == store
    assert again.dumps() == store.dumps()


def test_add_notes_deduplicates():
    store = MemoryStore()
    note = ExperienceNote("k", "x")
    assert store.add_notes("k", [note, note]) == [note]
    assert store.add_notes("k", [note]) == []
    assert store.notes_for("k") == [note] and store.notes_for("other") == []


def test_store_version_checked():
    with pytest.raises(ValueError):
        MemoryStore.from_json({"version": 99})


def test_signature_examples(f1):
    assert signature("What are the top-selling categories in Q3?", f1.meta) == "agg+filter+sort|d2x1"
    assert signature("hello there", f1.meta) == "none|d2x1"


@pytest.mark.parametrize("a,b", [
    ("What are the top-selling categories in Q3?", "What are the top-selling categories in Q2?"),
    ("Which region has the highest Q2 sales?", "Which region has the highest Q1 sales?"),
    ("average of Q2 sales", "average of Q3 sales"),
])
def test_signature_is_value_agnostic(f1, a, b):
    assert signature(a, f1.meta) == signature(b, f1.meta)


def test_signature_depends_on_header_depths(f1, all_fixture_grids):
    flat = analyze(all_fixture_grids["F3"])
    q = "average of Q2 sales"
    assert signature(q, f1.meta) != signature(q, flat.meta)


def test_kinds_are_normalised():
    assert Reorder("filter", OperatorKind.AGG) == Reorder(OperatorKind.FILTER, "AGG")
