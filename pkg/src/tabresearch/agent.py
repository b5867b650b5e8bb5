"""Provider boundary for every language-model interaction.

Requests render to a single prompt document; providers answer in a
line-oriented ``key: value`` schema which :func:`call` parses back into a
typed response. :class:`MockProvider` is a deterministic rule-based stand-in
so the engine runs offline; :class:`RemoteProvider` speaks a minimal
chat-completion wire shape over HTTP.

The prompt wording here is original to this package.
"""

from __future__ import annotations

import difflib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import AgentProtocolError, BudgetExhausted, TransportError
from .opbank import (
    CHART_KINDS,
    Agg,
    Chart,
    Derive,
    Filter,
    Group,
    Limit,
    OperatorInstance,
    Sort,
    Vocabulary,
    agg_output,
    kinds_of_signature,
    vocabulary,
)
from .structure import PATH_SEP, ROW_KEY, Triple, render_triples

logger = logging.getLogger(__name__)

PROMPT_CAP = 16_000
THINK, CODE = "THINK", "CODE"


# intent lexicon (shared with memory signatures and answer validation) -------------

AGG_WORDS = {"total": "sum", "sum": "sum", "selling": "sum",
             "average": "mean", "mean": "mean", "avg": "mean", "count": "count",
             "number": "count"}
DESC_WORDS = {"top", "largest", "highest", "most", "max", "maximum", "best", "biggest"}
ASC_WORDS = {"lowest", "smallest", "least", "min", "minimum", "worst", "fewest", "bottom"}
ORDER_WORDS = {"trend": "asc", "compare": "desc", "rank": "desc"}
CHART_WORDS = {"chart", "plot", "graph", "pie", "line", "bar", "scatter"}
FILTER_WORDS = {"in", "for"}
GROUP_WORDS = {"by", "per", "each"}
QUANTIFIERS = {"each", "all", "every", "the", "a", "an", "total"}
STOP = {
    "what", "is", "are", "was", "were", "the", "a", "an", "of", "which", "who", "has", "have",
    "in", "for", "by", "per", "each", "all", "across", "every", "as", "to", "and", "with",
    "value", "values", "me", "show", "give", "does", "do", "did", "how", "much", "many", "from",
    "over", "on", "at", "between", "than", "its", "their", "there", "that", "this", "be",
    "overall", "amount", "figure", "figures", "?", "when",
}

_TOKEN = re.compile(r"[A-Za-z0-9_.%]+|[一-鿿]+")


def tokenize(query: str) -> list[str]:
    return _TOKEN.findall(query)


def normalize(word: str) -> str:
    w = word.lower()
    if len(w) > 3 and w.endswith("ies"):
        return w[:-3] + "y"
    if len(w) > 3 and w.endswith("s") and not w.endswith("ss"):
        return w[:-1]
    return w


def _lexical(w: str) -> bool:
    return (w in AGG_WORDS or w in DESC_WORDS or w in ASC_WORDS or w in ORDER_WORDS
            or w in CHART_WORDS or w in STOP)


@dataclass
class Intent:
    """Structured reading of a query under the mock lexicon."""

    filters: list[str] = field(default_factory=list)
    group: str | None = None
    agg: str | None = None
    direction: str | None = None
    limit: int | None = None
    chart: str | None = None
    x: str | None = None
    target: str | None = None
    measure: str = ""

    def keywords(self) -> set[str]:
        out = set()
        if self.agg:
            out.add("agg")
        if self.filters:
            out.add("filter")
        if self.direction:
            out.add("sort")
        if self.chart:
            out.add("chart")
        return out

    @property
    def superlative(self) -> bool:
        return self.limit is not None

    def subqueries(self) -> list[str]:
        subs = [f"filter {f}" for f in self.filters]
        measure = self.measure or "*"
        if self.chart:
            subs.append(f"chart {self.chart} x {self.x or '*'} series {measure}")
            return subs
        agg = self.agg
        if self.group:
            subs.append(f"group by {self.group}")
            agg = agg or "sum"
        if agg:
            subs.append(f"aggregate {agg} over {measure}")
        if self.direction:
            subs.append(f"sort {self.direction} by {'aggregate' if agg else measure}")
        if self.limit is not None:
            subs.append(f"limit {self.limit}")
        if not subs:
            subs.append(f"lookup {measure}")
        return subs


def read_intent(query: str) -> Intent:
    """Apply the keyword lexicon to a query."""
    toks = tokenize(query)
    low = [t.lower() for t in toks]
    n = len(toks)
    it = Intent()
    used: set[int] = set()

    def next_content(i: int) -> int | None:
        j = i + 1
        while j < n and low[j] in ("the", "a", "an"):
            j += 1
        return j if j < n else None

    for i, w in enumerate(low):
        if w in AGG_WORDS and it.agg is None:
            it.agg = AGG_WORDS[w]
        if w in CHART_WORDS:
            if w in CHART_KINDS:
                it.chart = w
            elif it.chart is None:
                it.chart = "bar"
        if w in DESC_WORDS or w in ASC_WORDS:
            it.direction = "desc" if w in DESC_WORDS else "asc"
            k = 1
            j = i + 1
            if j < n and low[j].isdigit():
                k = int(low[j])
                used.add(j)
            it.limit = k
            # a plural noun right after the superlative names the grouping
            j = i + 1
            while j < n and (j in used or low[j] in AGG_WORDS):
                j += 1
            if j < n and not _lexical(low[j]) and normalize(low[j]) != low[j] \
                    and not any(ch.isdigit() for ch in low[j]):
                it.group = toks[j]
                used.add(j)
        elif w in ORDER_WORDS and it.direction is None:
            it.direction = ORDER_WORDS[w]
        if w == "which":
            j = next_content(i)
            if j is not None and not _lexical(low[j]):
                it.target = toks[j]
                used.add(j)

    for i, w in enumerate(low):
        if w in FILTER_WORDS:
            j = next_content(i)
            if j is None or low[j] in QUANTIFIERS or _lexical(low[j]) or j in used:
                continue
            it.filters.append(toks[j])
            used.add(j)
        elif w in GROUP_WORDS:
            j = next_content(i)
            if j is None or _lexical(low[j]) or j in used:
                continue
            if it.chart and w == "by":
                it.x = toks[j]
            elif it.group is None:
                it.group = toks[j]
            used.add(j)

    rest = [t for i, t in enumerate(toks) if i not in used and not _lexical(t.lower())
            and "-" not in t]
    digits = [t for t in rest if any(ch.isdigit() for ch in t)]
    it.measure = " ".join(digits or rest)
    return it


def intent_keywords(query: str) -> list[str]:
    return sorted(read_intent(query).keywords())


# requests and responses ---------------------------------------------------------------


def _cap(text: str) -> str:
    if len(text) <= PROMPT_CAP:
        return text
    marker = "\n[truncated]"
    return text[:PROMPT_CAP - len(marker)] + marker


@dataclass(frozen=True)
class Decompose:
    query: str
    meta_digest: str

    def render(self) -> str:
        return _cap(
            "Task: split the analytical question into short sub-queries.\n"
            "Respond only with lines of the form 'subquery: <text>'.\n"
            "Sub-query forms: filter X | group by X | aggregate FN over X | "
            "sort asc|desc by X | limit K | chart KIND x X series Y | lookup X\n"
            f"Table meta:\n{self.meta_digest}\nQuestion: {self.query}")


@dataclass(frozen=True)
class ChooseOps:
    subqueries: tuple[str, ...]
    triples: tuple[Triple, ...]

    def render(self) -> str:
        subs = "\n".join(f"- {s}" for s in self.subqueries)
        return _cap(
            "Task: choose operator instances for the sub-queries.\n"
            "Respond only with lines 'op: <json>' using kinds LOAD CLEAN FILTER GROUP AGG SORT "
            "LIMIT JOIN PIVOT DERIVE CHART and descriptors from the triples, or 'ops: none'.\n"
            f"Sub-queries:\n{subs}\nTriples:\n{render_triples(self.triples)}")


@dataclass(frozen=True)
class Step:
    phase: str
    trace: str
    op_signature: str = ""
    state_digest: str = ""

    def render(self) -> str:
        return _cap(
            f"Task: reason {self.phase} the next operation.\n"
            "Respond only with 'flag: THINK' or 'flag: CODE' followed by 'content: <text>'.\n"
            f"Trace so far:\n{self.trace or '(empty)'}\nNext operation: {self.op_signature}\n"
            f"State: {self.state_digest}")


@dataclass(frozen=True)
class Summarize:
    key: str
    records: tuple[Mapping[str, Any], ...]

    def render(self) -> str:
        lines = [f"{r['path']} | {r['op']} | {r['outcome']} | reward={r['reward']:.4f}"
                 for r in self.records]
        return _cap(
            "Task: distill at most three value-agnostic lessons from the execution log.\n"
            "Respond only with lines 'note: <json>' or 'notes: none'. Note JSON keys: "
            "lesson, edit (null or {type: reorder|remove|insert|remap, ...}).\n"
            f"Query class: {self.key}\nLog:\n" + "\n".join(lines))


@dataclass(frozen=True)
class ExtractAnswer:
    query: str
    outcomes: tuple[str, ...]

    def render(self) -> str:
        return _cap(
            "Task: state the final answer to the question from the computed outcome.\n"
            "Respond only with 'answer: <text>' then 'value: <json>'.\n"
            f"Question: {self.query}\nOutcome:\n" + "\n".join(self.outcomes))


@dataclass(frozen=True)
class SubQueries:
    items: tuple[str, ...]


@dataclass(frozen=True)
class OpChoices:
    ops: tuple[OperatorInstance, ...]


@dataclass(frozen=True)
class Flag:
    flag: str
    content: str


@dataclass(frozen=True)
class Notes:
    notes: tuple[Mapping[str, Any], ...]


@dataclass(frozen=True)
class Answer:
    text: str
    value: Any


def _lines(text: str) -> list[tuple[str, str]]:
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise AgentProtocolError(f"line outside the schema: {line!r}")
        out.append((key.strip().lower(), value.strip()))
    return out


def _json(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError as exc:
        raise AgentProtocolError(f"invalid JSON payload {value!r}") from exc


def parse_response(request, text: str):
    """Parse provider text into the response variant matching ``request``."""
    if not isinstance(text, str):
        raise AgentProtocolError("provider returned non-text")
    pairs = _lines(text)
    keys = {k for k, _ in pairs}
    if isinstance(request, Decompose):
        if not pairs or keys != {"subquery"}:
            raise AgentProtocolError("expected one or more 'subquery:' lines")
        items = tuple(v for _, v in pairs if v)
        if not items:
            raise AgentProtocolError("empty sub-query list")
        return SubQueries(items)
    if isinstance(request, ChooseOps):
        if pairs == [("ops", "none")]:
            return OpChoices(())
        if not pairs or keys != {"op"}:
            raise AgentProtocolError("expected 'op:' lines")
        try:
            return OpChoices(tuple(OperatorInstance.from_json(_json(v)) for _, v in pairs))
        except (ValueError, KeyError, TypeError) as exc:
            raise AgentProtocolError(f"invalid operator instance: {exc}") from exc
    if isinstance(request, Step):
        d = dict(pairs)
        if keys != {"flag", "content"} or len(pairs) != 2:
            raise AgentProtocolError("expected 'flag:' and 'content:' lines")
        flag = d["flag"].strip("[]").upper()
        if flag not in (THINK, CODE) or not d["content"]:
            raise AgentProtocolError("flag must be THINK or CODE with non-empty content")
        return Flag(flag, d["content"])
    if isinstance(request, Summarize):
        if pairs == [("notes", "none")]:
            return Notes(())
        if not pairs or keys != {"note"}:
            raise AgentProtocolError("expected 'note:' lines or 'notes: none'")
        notes = tuple(_json(v) for _, v in pairs)
        if len(notes) > 3 or not all(isinstance(n, dict) and "lesson" in n for n in notes):
            raise AgentProtocolError("at most three notes, each with a lesson")
        return Notes(notes)
    if isinstance(request, ExtractAnswer):
        d = dict(pairs)
        if keys != {"answer", "value"} or len(pairs) != 2:
            raise AgentProtocolError("expected 'answer:' and 'value:' lines")
        return Answer(d["answer"], _json(d["value"]))
    raise TypeError(f"unknown request type {type(request).__name__}")


# budget and call ---------------------------------------------------------------------------


class CallBudget:
    """Atomic call counter; ``used`` never exceeds ``limit``."""

    def __init__(self, limit: int, used: int = 0):
        if limit < 0 or not 0 <= used <= limit:
            raise ValueError("need 0 <= used <= limit")
        self.limit = limit
        self.used = used
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            if self.used >= self.limit:
                raise BudgetExhausted(f"call budget of {self.limit} exhausted")
            self.used += 1

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def __repr__(self) -> str:
        return f"CallBudget(used={self.used}, limit={self.limit})"


def call(provider, request, budget: CallBudget):
    """One provider round trip. The budget is charged even if the call fails."""
    budget.acquire()
    text = provider.respond(request.render(), request)
    return parse_response(request, text)


# mock provider --------------------------------------------------------------------------------


def _split_sub(sub: str) -> tuple[str, list[str]]:
    head, _, rest = sub.partition(" ")
    return head, rest.split()


class _Resolver:
    """Nearest-label lookup against the table vocabulary (closed world)."""

    def __init__(self, voc: Vocabulary):
        self.voc = voc
        self.cols = list(voc.col_paths)

    def column(self, phrase: str) -> str | None:
        if not phrase or phrase == "*":
            return None
        words = {normalize(w) for w in tokenize(phrase)} | {normalize(phrase)}
        hits = [p for p in self.cols if normalize(self.voc.col_paths[p][-1]) in words]
        if hits:
            return max(hits, key=lambda p: (len(self.voc.col_paths[p]), -self.cols.index(p)))
        labels = [self.voc.col_paths[p][-1].lower() for p in self.cols]
        close = difflib.get_close_matches(phrase.lower(), labels, n=1, cutoff=0.75)
        return self.cols[labels.index(close[0])] if close else None

    def row(self, token: str) -> str | None:
        for label in self.voc.row_labels:
            if normalize(label) == normalize(token):
                return label
        return None

    def leaves(self, path: str | None) -> list[str]:
        return self.voc.leaves_under(path) if path else []


def choose_ops_mock(subqueries: Sequence[str], triples: Sequence[Triple]) -> list[OperatorInstance]:
    res = _Resolver(vocabulary(triples))
    filters, group, agg, sort, limit, chart, lookup = [], None, None, None, None, None, None
    for sub in subqueries:
        head, words = _split_sub(sub)
        if head == "filter":
            filters.append(" ".join(words))
        elif head == "group":
            group = " ".join(words[1:])
        elif head == "aggregate" and len(words) >= 2:
            agg = (words[0], " ".join(words[2:]))
        elif head == "sort" and len(words) >= 3:
            sort = (words[0], " ".join(words[2:]))
        elif head == "limit" and words and words[0].isdigit():
            limit = int(words[0])
        elif head == "chart" and len(words) >= 5:
            chart = (words[0], words[2], " ".join(words[4:]))
        elif head == "lookup":
            lookup = " ".join(words)

    ops: list[OperatorInstance] = []
    default_measure = None
    for token in filters:
        col = res.column(token)
        if col is not None and res.leaves(col) == [col]:
            ops.append(Filter(col, "notnull"))
            default_measure = default_measure or col
            continue
        label = res.row(token)
        if label is not None:
            path = res.voc.row_labels[label]
            flat = len(path) == 1 and res.voc.row_leaf[label]
            ops.append(Filter(ROW_KEY, "==" if flat else "contains", label))

    def measure_of(phrase: str) -> str | None:
        leaves = res.leaves(res.column(phrase))
        if not leaves:
            return default_measure
        if len(leaves) == 1:
            return leaves[0]
        name = f"{res.column(phrase)}:total"
        ops.append(Derive(name, " + ".join(f"[{leaf}]" for leaf in leaves)))
        return name

    if chart is not None:
        kind, x, series = chart
        x_desc = res.column(x) if x != "*" else None
        leaves = res.leaves(res.column(series)) or ([default_measure] if default_measure else [])
        if leaves:
            ops.append(Chart(kind, x_desc or ROW_KEY, *leaves))
        return _dedupe(ops)

    agg_name = None
    if group:
        g = res.column(group)
        if g is not None and res.leaves(g) == [g]:
            ops.append(Group(g))
    if agg is not None:
        fn, phrase = agg
        m = measure_of(phrase)
        if m is not None:
            ops.append(Agg(fn, m))
            agg_name = agg_output(fn, m)
    if sort is not None:
        direction, phrase = sort
        target = agg_name if phrase == "aggregate" else measure_of(phrase)
        if target is not None:
            ops.append(Sort(target, direction))
    if limit is not None:
        ops.append(Limit(limit))
    if lookup is not None:
        m = res.column(lookup)
        if m is not None and res.leaves(m) == [m]:
            ops.append(Filter(m, "notnull"))
    return _dedupe(ops)


def _dedupe(ops):
    seen, out = set(), []
    for op in ops:
        if op.signature not in seen:
            seen.add(op.signature)
            out.append(op)
    return out


_UNKNOWN = re.compile(r"error: UnknownDescriptor: (.+?) not found; available: (.*)$")


def summarize_mock(records: Sequence[Mapping[str, Any]], key: str) -> list[dict]:
    """The three mock abstraction rules, in a fixed order."""
    notes: list[dict] = []
    seen_remaps = set()
    for r in records:
        m = _UNKNOWN.match(r["outcome"])
        if not m:
            continue
        old = m.group(1).strip("'\"")
        available = [a for a in m.group(2).split(" | ") if a and a != ROW_KEY]
        best = max(available, key=lambda a: (difflib.SequenceMatcher(None, old.lower(), a.lower()).ratio(), -available.index(a)), default=None)
        if best is not None and old not in seen_remaps:
            seen_remaps.add(old)
            notes.append({"lesson": f"descriptor {old} does not exist; use {best}",
                          "edit": {"type": "remap", "old": old, "new": best}})
            break

    rewards: dict[str, float] = {}
    for r in records:
        rewards.setdefault(r["path"], r["reward"])

    def first(kinds, kind):
        return kinds.index(kind) if kind in kinds else None

    agg_first, filter_first = [], []
    for sig, reward in rewards.items():
        kinds = kinds_of_signature(sig)
        a, f = first(kinds, "AGG"), first(kinds, "FILTER")
        if a is None or f is None:
            continue
        (agg_first if a < f else filter_first).append(reward)
    if agg_first and filter_first and min(agg_first) < max(filter_first):
        notes.append({"lesson": "filter before aggregating keeps the aggregate scoped",
                      "edit": {"type": "reorder", "before": "FILTER", "after": "AGG"}})

    for sig in rewards:
        kinds = kinds_of_signature(sig)
        dup = next((a for a, b in zip(kinds, kinds[1:]) if a == b), None)
        if dup is not None:
            notes.append({"lesson": f"a repeated {dup} step can be skipped",
                          "edit": {"type": "remove", "kind": dup}})
            break
    return notes[:3]


def canonical_answer(query: str, outcome: Mapping[str, Any]) -> tuple[str, Any]:
    """Render a JSON outcome as (text, typed value)."""
    kind = outcome.get("type")
    if kind == "scalar":
        v = outcome["value"]
        text = "null" if v is None else (repr(v) if isinstance(v, float) else str(v))
        return text + ("%" if outcome.get("unit") == "%" else ""), v
    if kind == "chart":
        value = {k: outcome[k] for k in ("kind", "x", "series")}
        return f"{value['kind']} chart of {', '.join(value['series'])} by {value['x']}", value
    if kind == "grouped":
        groups = outcome["groups"]
        if all(not isinstance(v, list) for v in groups.values()):
            return "; ".join(f"{k}: {v}" for k, v in groups.items()), dict(groups)
        return "; ".join(groups), list(groups)
    records = outcome.get("records", [])
    target = read_intent(query).target
    names = []
    for rec in records:
        value = rec["row"]
        if target:
            for col, v in rec["values"].items():
                if normalize(col.split(PATH_SEP)[-1]) == normalize(target) and v is not None:
                    value = v
                    break
        names.append(value)
    if len(names) == 1:
        return str(names[0]), names[0]
    return ", ".join(map(str, names)), names


class MockProvider:
    """Deterministic rule-based provider; a pure function of (seed, request)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def respond(self, prompt: str, request) -> str:
        if isinstance(request, Decompose):
            subs = read_intent(request.query).subqueries()
            return "\n".join(f"subquery: {s}" for s in subs)
        if isinstance(request, ChooseOps):
            ops = choose_ops_mock(request.subqueries, request.triples)
            if not ops:
                return "ops: none"
            return "\n".join("op: " + json.dumps(op.to_json(), ensure_ascii=False, sort_keys=True)
                             for op in ops)
        if isinstance(request, Step):
            n = request.trace.count("[CODE]")
            return (f"flag: THINK\ncontent: step {n + 1}: apply {request.op_signature} "
                    f"to {request.state_digest}")
        if isinstance(request, Summarize):
            notes = summarize_mock(request.records, request.key)
            if not notes:
                return "notes: none"
            return "\n".join("note: " + json.dumps(n, ensure_ascii=False, sort_keys=True)
                             for n in notes)
        if isinstance(request, ExtractAnswer):
            outcome = json.loads(request.outcomes[0])
            text, value = canonical_answer(request.query, outcome)
            return (f"answer: {text}\n"
                    f"value: {json.dumps(value, ensure_ascii=False, sort_keys=True)}")
        raise TypeError(f"unknown request type {type(request).__name__}")


def mock_agent(seed: int = 0) -> MockProvider:
    return MockProvider(seed)


# remote provider ------------------------------------------------------------------------------

ENV_ENDPOINT = "TABRESEARCH_ENDPOINT"
ENV_MODEL = "TABRESEARCH_MODEL"
ENV_TOKEN_VAR = "TABRESEARCH_TOKEN_VAR"

PREAMBLE = ("You are a table-analysis planner. Respond only with the schema lines the task "
            "asks for. Do not add commentary.")


class RemoteProvider:
    """Chat-completion provider configured from the environment.

    ``TABRESEARCH_TOKEN_VAR`` names the variable that holds the bearer token,
    so the token itself never appears in configuration.
    """

    def __init__(self, endpoint: str, model: str, token: str | None = None, *,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs) -> "RemoteProvider":
        env = os.environ if env is None else env
        endpoint, model = env.get(ENV_ENDPOINT), env.get(ENV_MODEL)
        if not endpoint or not model:
            raise TransportError(f"set {ENV_ENDPOINT} and {ENV_MODEL} for the remote provider")
        token_var = env.get(ENV_TOKEN_VAR)
        token = env.get(token_var) if token_var else None
        return cls(endpoint, model, token, **kwargs)

    def respond(self, prompt: str, request=None) -> str:
        import httpx

        body = {"model": self.model, "messages": [
            {"role": "system", "content": PREAMBLE},
            {"role": "user", "content": prompt},
        ]}
        try:
            resp = self._client.post(self.endpoint, json=body)
            resp.raise_for_status()
            doc = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        try:
            return doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise AgentProtocolError("response lacks choices[0].message.content") from exc

    def close(self) -> None:
        self._client.close()


# session -----------------------------------------------------------------------------------------


class AgentSession:
    """A provider bound to one call budget, with one method per agent role."""

    def __init__(self, provider, budget: CallBudget):
        self.provider = provider
        self.budget = budget

    def call(self, request):
        return call(self.provider, request, self.budget)

    def decompose(self, query: str, meta_digest: str) -> list[str]:
        return list(self.call(Decompose(query, meta_digest)).items)

    def choose_ops(self, subqueries: Sequence[str], triples: Sequence[Triple]) -> list[OperatorInstance]:
        return list(self.call(ChooseOps(tuple(subqueries), tuple(triples))).ops)

    def step(self, phase: str, trace: str, op_signature: str = "", state_digest: str = "") -> Flag:
        return self.call(Step(phase, trace, op_signature, state_digest))

    def summarize(self, key: str, records: Sequence[Mapping[str, Any]]) -> list[Mapping[str, Any]]:
        return list(self.call(Summarize(key, tuple(records))).notes)

    def extract_answer(self, query: str, outcomes: Sequence[str]) -> Answer:
        return self.call(ExtractAnswer(query, tuple(outcomes)))
