"""Closed-loop driver: decompose, enumerate, select, execute, learn, vote."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .agent import AgentSession, CallBudget, canonical_answer, mock_agent, read_intent
from .errors import (
    AgentProtocolError,
    BudgetExhausted,
    EmptyCandidates,
    EmptySelection,
    NoValidOrder,
)
from .executor import (
    ChartSpec,
    Grouped,
    RecordList,
    Scalar,
    VirtualClock,
    WallClock,
    check_type,
    compute_reward,
    outcome_json,
    run_path,
)
from .memory import MemoryStore, abstract, adapt_candidates, record, signature
from .opbank import Load, build_operation_map, enumerate_paths, select_operations
from .planner import MEAN, PlannerConfig, PlannerState, select_top_k
from .structure import analyze
from .table import RawGrid

logger = logging.getLogger(__name__)

REL_TOL = 1e-9


class _Abstain:
    """The explicit no-answer outcome."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Abstain"

    def __bool__(self) -> bool:
        return False


Abstain = _Abstain()


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 1.0
    eta: float = 0.3
    update_mode: str = MEAN
    k: int = 1
    K: int = 8
    budget: int = 12
    m_votes: int = 3
    seed: int = 0
    think_paths: int = 1
    virtual_clock: bool = True
    r_max: float = 1.0

    def __post_init__(self):
        self.planner()
        for name in ("K", "m_votes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.budget < 0 or self.think_paths < 0:
            raise ValueError("budget and think_paths must be >= 0")

    def planner(self) -> PlannerConfig:
        return PlannerConfig(alpha=self.alpha, eta=self.eta, r_max=self.r_max,
                             update_mode=self.update_mode, k=self.k)


@dataclass(frozen=True)
class AnswerCandidate:
    value: Any
    path_signature: str
    reward: float
    valid: bool
    order: int = 0

    def to_json(self) -> dict:
        return {"path": self.path_signature, "reward": self.reward, "valid": self.valid,
                "order": self.order,
                "value": outcome_json(self.value) if self.value is not None else None}


@dataclass
class EngineReport:
    answer: Any
    candidates: list[AnswerCandidate]
    iterations: int
    calls_used: int
    wall_time: float
    paths: Mapping[str, Mapping[str, float]]
    trace: Mapping[str, list] = field(default_factory=dict)
    answer_text: str | None = None
    answer_value: Any = None
    query: str = ""

    @property
    def abstain(self) -> bool:
        return self.answer is Abstain

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "answer": None if self.abstain else self.answer_value,
            "answer_text": self.answer_text,
            "outcome": None if self.abstain else outcome_json(self.answer),
            "abstain": self.abstain,
            "calls_used": self.calls_used,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "candidates": [c.to_json() for c in sorted(self.candidates,
                                                         key=lambda c: c.path_signature)],
            "paths": self.paths,
            "trace": self.trace,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True)


# answer validation and voting ---------------------------------------------------------------


def validate_answer(outcome, query: str, terminal) -> bool:
    """Format check for the terminal kind plus the query's intent-specific shape."""
    if outcome is None or not check_type(outcome, terminal):
        return False
    it = read_intent(query)
    if it.chart:
        return isinstance(outcome, ChartSpec)
    if it.superlative:
        if isinstance(outcome, Scalar):
            return True
        return isinstance(outcome, RecordList) and 1 <= len(outcome.view) <= it.limit
    if it.agg:
        return isinstance(outcome, Scalar) or (isinstance(outcome, Grouped) and outcome.scalars())
    return True


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=0.0) or a == b
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def canonical(value) -> Any:
    if isinstance(value, (Scalar, RecordList, Grouped, ChartSpec)):
        return outcome_json(value)
    return value


def outcomes_equal(a, b) -> bool:
    return _same(canonical(a), canonical(b))


def majority_vote(candidates: Sequence[AnswerCandidate]):
    """Most frequent value among valid candidates.

    Ties go to the larger summed reward, then to the earliest execution.
    """
    valid = sorted((c for c in candidates if c.valid), key=lambda c: c.order)
    clusters: list[list[AnswerCandidate]] = []
    for c in valid:
        for cluster in clusters:
            if outcomes_equal(cluster[0].value, c.value):
                cluster.append(c)
                break
        else:
            clusters.append([c])
    if not clusters:
        return Abstain
    best = min(clusters, key=lambda cl: (-len(cl), -math.fsum(c.reward for c in cl), cl[0].order))
    return best[0].value


def _converged(candidates: Sequence[AnswerCandidate], pending: int, m_votes: int) -> bool:
    valid = [c for c in candidates if c.valid]
    if len(valid) >= m_votes:
        return True
    counts: list[int] = []
    reps: list[Any] = []
    for c in valid:
        for i, r in enumerate(reps):
            if outcomes_equal(r, c.value):
                counts[i] += 1
                break
        else:
            reps.append(c.value)
            counts.append(1)
    counts.sort(reverse=True)
    if not counts:
        return False
    lead = counts[0] - (counts[1] if len(counts) > 1 else 0)
    return lead > pending


# driver -------------------------------------------------------------------------------------------


def run_query(grid: RawGrid, query: str, config: EngineConfig = EngineConfig(), provider=None, *,
              planner_state: PlannerState | None = None, memory: MemoryStore | None = None,
              aux=None) -> EngineReport:
    """Answer ``query`` over ``grid``. Budget exhaustion yields an Abstain report."""
    provider = provider if provider is not None else mock_agent(config.seed)
    state = planner_state if planner_state is not None else PlannerState()
    memory = memory if memory is not None else MemoryStore()
    pcfg = config.planner()
    budget = CallBudget(config.budget)
    session = AgentSession(provider, budget)
    structure = analyze(grid)
    key = signature(query, structure.meta)
    notes = memory.notes_for(key)
    wall_start = time.perf_counter()
    virtual_total = 0.0

    candidates: list[AnswerCandidate] = []
    traces: dict[str, list] = {}
    iterations = 0
    abstained = False
    first_record = len(memory.records)
    try:
        subqueries = session.decompose(query, structure.meta.digest())
        ops = select_operations(session, subqueries, structure.triples)
        op_map = build_operation_map([Load(), *ops])
        paths = enumerate_paths(op_map, config.K)
        paths, adapted = adapt_candidates(paths, notes, state)
        state.absorb(adapted)
        executed: set[str] = set()
        limit = config.K * 2
        while True:
            pending = [p for p in paths if p.signature not in executed]
            if not pending or _converged(candidates, len(pending), config.m_votes):
                break
            iterations += 1
            failed = False
            for path in select_top_k(state, pending, pcfg, notes):
                think = len(executed) < config.think_paths
                clock = VirtualClock() if config.virtual_clock else WallClock()
                outcome, feedback, trace = run_path(
                    path, structure.view, provider, budget if think else CallBudget(0),
                    clock=clock, aux=aux)
                executed.add(path.signature)
                reward = compute_reward(feedback, r_max=pcfg.r_max)
                state.commit(path, reward, pcfg)
                record(memory, path, feedback, reward, trace)
                virtual_total += feedback.f_time
                valid = validate_answer(outcome, query, path)
                candidates.append(AnswerCandidate(outcome, path.signature, reward, valid,
                                                  order=len(candidates)))
                traces[path.signature] = [s.to_json() for s in trace]
                failed = failed or not valid
            if failed:
                recent = memory.records[first_record:]
                new = memory.add_notes(key, abstract(session, recent, key))
                if new:
                    notes = memory.notes_for(key)
                    paths, adapted = adapt_candidates(paths, notes, state)
                    paths = paths[:limit]
                    state.absorb(adapted)
    except BudgetExhausted as exc:
        logger.info("abstaining: %s", exc)
        abstained = True
    except (EmptySelection, NoValidOrder, EmptyCandidates, AgentProtocolError) as exc:
        logger.warning("abstaining: %s", exc)
        abstained = True

    answer = Abstain if abstained else majority_vote(candidates)
    text = value = None
    if answer is not Abstain:
        doc = json.dumps(outcome_json(answer), ensure_ascii=False, sort_keys=True)
        try:
            reply = session.extract_answer(query, [doc])
            text, value = reply.text, reply.value
        except (BudgetExhausted, AgentProtocolError):
            text, value = canonical_answer(query, json.loads(doc))
    snapshot, _ = state.snapshot()
    wall = virtual_total if config.virtual_clock else time.perf_counter() - wall_start
    return EngineReport(
        answer=answer, candidates=candidates, iterations=iterations, calls_used=budget.used,
        wall_time=wall,
        paths={sig: {"r_hat": s.r_hat, "n": s.n, "prior": s.prior} for sig, s in sorted(snapshot.items())},
        trace=traces, answer_text=text, answer_value=value, query=query,
    )

