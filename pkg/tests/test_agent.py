from __future__ import annotations

import json
import threading

import httpx
import pytest

from tabresearch.agent import (
    PROMPT_CAP,
    AgentSession,
    Answer,
    CallBudget,
    ChooseOps,
    Decompose,
    ExtractAnswer,
    Flag,
    MockProvider,
    Notes,
    OpChoices,
    RemoteProvider,
    Step,
    SubQueries,
    Summarize,
    call,
    canonical_answer,
    intent_keywords,
    parse_response,
    read_intent,
)
from tabresearch.errors import AgentProtocolError, BudgetExhausted, TransportError
from tabresearch.opbank import Filter, OperatorKind
from tabresearch.structure import analyze


def test_decompose_average():
    out = call(MockProvider(0), Decompose("average of Q2 sales", ""), CallBudget(1))
    assert out == SubQueries(("aggregate mean over Q2",))


def test_decompose_top_selling_query():
    intent = read_intent("What are the top-selling categories in Q3?")
    assert intent.subqueries() == ["filter Q3", "group by categories", "aggregate sum over *",
                                   "sort desc by aggregate", "limit 1"]
    assert intent.superlative and intent.limit == 1


@pytest.mark.parametrize("query,keywords", [
    ("average of Q2 sales", ["agg"]),
    ("Which region has the highest Q2 sales?", ["sort"]),
    ("bar chart of Q2 by Region", ["chart"]),
    ("total sales in North", ["agg", "filter"]),
    ("hello", []),
])
def test_intent_keywords(query, keywords):
    assert intent_keywords(query) == keywords


def test_intent_limit_and_target():
    assert read_intent("top 2 regions by Q1").limit == 2
    assert read_intent("Which region has the highest Q2 sales?").target == "region"
    chart = read_intent("bar chart of Q2 by Region")
    assert (chart.chart, chart.x) == ("bar", "Region")


def test_choose_ops_uses_table_vocabulary(f1_grid):
    s = analyze(f1_grid)
    out = call(MockProvider(0), ChooseOps(("filter North", "aggregate sum over Q2"), tuple(s.triples)),
               CallBudget(1))
    assert isinstance(out, OpChoices)
    kinds = [op.kind for op in out.ops]
    assert kinds == [OperatorKind.FILTER, OperatorKind.AGG]
    assert out.ops[0] == Filter("@row", "==", "North")
    assert out.ops[1]["measure"] == "Sales/Q2"


def test_budget_exhaustion_leaves_used_unchanged():
    budget = CallBudget(2, used=2)
    with pytest.raises(BudgetExhausted):
        call(MockProvider(0), Decompose("q", ""), budget)
    assert budget.used == 2 and budget.remaining == 0


def test_budget_validation():
    with pytest.raises(ValueError):
        CallBudget(-1)
    with pytest.raises(ValueError):
        CallBudget(1, used=2)


def test_budget_is_atomic():
    budget = CallBudget(500)
    failures = []

    def work():
        for _ in range(100):
            try:
                budget.acquire()
            except BudgetExhausted:
                failures.append(1)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert budget.used == 500 and len(failures) == 300


class CountingProvider:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def respond(self, prompt, request):
        self.calls += 1
        return self.inner.respond(prompt, request)


def test_every_round_trip_is_charged_exactly_once():
    provider = CountingProvider(MockProvider(0))
    session = AgentSession(provider, CallBudget(10))
    session.decompose("average of Q2 sales", "")
    session.step("before", "")
    session.summarize("k", [])
    session.extract_answer("q", [json.dumps({"type": "scalar", "value": 3})])
    assert provider.calls == session.budget.used == 4


def test_mock_is_deterministic():
    requests = [Decompose("What are the top-selling categories in Q3?", "m"),
                Step("before", "[CODE] LOAD", "FILTER(x)", "view 2x4"),
                Summarize("k", ({"path": "LOAD→AGG(sum,x)→FILTER(y,notnull,null)", "op": "LOAD",
                                 "outcome": "ok", "reward": 0.1},
                                {"path": "LOAD→FILTER(y,notnull,null)→AGG(sum,x)", "op": "LOAD",
                                 "outcome": "ok", "reward": 0.9})),
                ExtractAnswer("q", (json.dumps({"type": "scalar", "value": 15}),))]
    first = [MockProvider(3).respond(r.render(), r) for r in requests]
    for _ in range(100):
        assert [MockProvider(3).respond(r.render(), r) for r in requests] == first


@pytest.mark.parametrize("request_,text,expected", [
    (Decompose("q", ""), "subquery: a\nsubquery: b", SubQueries(("a", "b"))),
    (ChooseOps((), ()), "ops: none", OpChoices(())),
    (Step("before", ""), "flag: [CODE]\ncontent: x", Flag("CODE", "x")),
    (Summarize("k", ()), "notes: none", Notes(())),
    (ExtractAnswer("q", ()), 'answer: 15\nvalue: 15', Answer("15", 15)),
])
def test_parse_valid(request_, text, expected):
    assert parse_response(request_, text) == expected


@pytest.mark.parametrize("request_,text", [
    (Decompose("q", ""), "Sure! Here are the sub-queries."),
    (Decompose("q", ""), "subquery: a\nop: {}"),
    (ChooseOps((), ()), 'op: {"kind": "NOPE"}'),
    (ChooseOps((), ()), "op: not json"),
    (Step("before", ""), "flag: PONDER\ncontent: x"),
    (Summarize("k", ()), 'note: {"edit": null}'),
    (Summarize("k", ()), "\n".join(['note: {"lesson": "x"}'] * 4)),
    (ExtractAnswer("q", ()), "answer: 3"),
])
def test_parse_rejects_off_schema(request_, text):
    with pytest.raises(AgentProtocolError):
        parse_response(request_, text)


def test_prompt_cap():
    long_query = "x" * (PROMPT_CAP * 2)
    prompt = Decompose(long_query, "").render()
    assert len(prompt) == PROMPT_CAP and prompt.endswith("[truncated]")


def test_canonical_answers():
    assert canonical_answer("q", {"type": "scalar", "value": 17.5}) == ("17.5", 17.5)
    assert canonical_answer("q", {"type": "scalar", "value": 3, "unit": "%"})[0] == "3%"
    text, value = canonical_answer("q", {"type": "grouped", "groups": {"North": 60, "South": 45}})
    assert value == {"North": 60, "South": 45} and text == "North: 60; South: 45"
    chart = {"type": "chart", "kind": "bar", "x": "Region", "series": ["Sales/Q2"]}
    assert canonical_answer("q", chart)[1] == {"kind": "bar", "x": "Region", "series": ["Sales/Q2"]}


def remote(handler):
    transport = httpx.MockTransport(handler)
    return RemoteProvider("http://llm.test/v1/chat", "m", "secret", transport=transport)


def chat(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def test_remote_success_and_headers():
    seen = {}

    def handler(req):
        seen["auth"] = req.headers.get("authorization")
        seen["body"] = json.loads(req.content)
        return chat("subquery: aggregate mean over Q2")

    budget = CallBudget(1)
    out = call(remote(handler), Decompose("average of Q2 sales", ""), budget)
    assert out == SubQueries(("aggregate mean over Q2",))
    assert seen["auth"] == "Bearer secret" and seen["body"]["model"] == "m"
    assert seen["body"]["messages"][-1]["content"].endswith("Question: average of Q2 sales")


def test_remote_off_schema_text_charges_budget():
    budget = CallBudget(3)
    with pytest.raises(AgentProtocolError):
        call(remote(lambda req: chat("I think the answer is 42.")), Decompose("q", ""), budget)
    assert budget.used == 1


def test_remote_http_errors_are_transport_errors():
    budget = CallBudget(3)
    with pytest.raises(TransportError):
        call(remote(lambda req: httpx.Response(503)), Decompose("q", ""), budget)
    assert budget.used == 1
    with pytest.raises(AgentProtocolError):
        call(remote(lambda req: httpx.Response(200, json={"id": 1})), Decompose("q", ""), budget)


def test_remote_from_env():
    env = {"TABRESEARCH_ENDPOINT": "http://llm.test", "TABRESEARCH_MODEL": "m",
           "TABRESEARCH_TOKEN_VAR": "MY_TOKEN", "MY_TOKEN": "abc"}
    seen = {}

    def handler(req):
        seen["auth"] = req.headers.get("authorization")
        return chat("notes: none")

    provider = RemoteProvider.from_env(env, transport=httpx.MockTransport(handler))
    assert call(provider, Summarize("k", ()), CallBudget(1)) == Notes(())
    assert seen["auth"] == "Bearer abc"
    with pytest.raises(TransportError):
        RemoteProvider.from_env({})
