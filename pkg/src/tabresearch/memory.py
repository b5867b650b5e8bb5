"""Siamese memory: per-step execution records and value-agnostic experience notes.

Notes carry optional structured edits. :func:`adapt_candidates` applies them
to candidate paths; edited paths enter the planner as fresh arms whose prior
reflects the notes they still match.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import AgentProtocolError, CyclicConstraints, NoValidOrder
from .executor import CODE, Feedback, StepTrace
from .opbank import (
    OperatorInstance,
    OperatorKind,
    Path,
    build_operation_map,
    respects,
)
from .planner import PlannerState, structural_prior

logger = logging.getLogger(__name__)

STORE_VERSION = 1


@dataclass(frozen=True)
class ExecutionRecord:
    path_signature: str
    op: OperatorInstance
    context_digest: str
    outcome_digest: str
    reward: float

    def to_json(self) -> dict:
        return {"path": self.path_signature, "op": self.op.to_json(),
                "context": self.context_digest, "outcome": self.outcome_digest,
                "reward": self.reward}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "ExecutionRecord":
        return cls(doc["path"], OperatorInstance.from_json(doc["op"]), doc["context"],
                   doc["outcome"], float(doc["reward"]))

    def summary(self) -> dict:
        return {"path": self.path_signature, "op": self.op.signature,
                "outcome": self.outcome_digest, "reward": self.reward}


# structured edits -------------------------------------------------------------------


def _kind(k) -> OperatorKind:
    return OperatorKind(k.value if isinstance(k, OperatorKind) else str(k).upper())


def _first(path: Path, kind: OperatorKind) -> int | None:
    return next((i for i, op in enumerate(path.ops) if op.kind == kind), None)


@dataclass(frozen=True)
class Reorder:
    """Operations of kind ``before`` belong ahead of kind ``after``."""

    before: OperatorKind
    after: OperatorKind

    def __post_init__(self):
        object.__setattr__(self, "before", _kind(self.before))
        object.__setattr__(self, "after", _kind(self.after))

    def flags(self, path: Path) -> bool:
        a, b = _first(path, self.after), _first(path, self.before)
        return a is not None and b is not None and a < b

    def apply(self, path: Path) -> Path:
        if not self.flags(path):
            return path
        ops = list(path.ops)
        a, b = _first(path, self.after), _first(path, self.before)
        op = ops.pop(b)
        ops.insert(a, op)
        return Path(tuple(ops))

    def to_json(self) -> dict:
        return {"type": "reorder", "before": self.before.value, "after": self.after.value}


@dataclass(frozen=True)
class Remove:
    """Drop adjacent repeats of ``kind``, keeping the last one."""

    kind: OperatorKind

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))

    def flags(self, path: Path) -> bool:
        return any(a.kind == b.kind == self.kind for a, b in zip(path.ops, path.ops[1:]))

    def apply(self, path: Path) -> Path:
        ops = [op for i, op in enumerate(path.ops)
               if not (op.kind == self.kind and i + 1 < len(path.ops)
                       and path.ops[i + 1].kind == self.kind)]
        return Path(tuple(ops))

    def to_json(self) -> dict:
        return {"type": "remove", "kind": self.kind.value}


@dataclass(frozen=True)
class Insert:
    """Insert ``op`` immediately before the first operation of kind ``before``."""

    op: OperatorInstance
    before: OperatorKind

    def __post_init__(self):
        object.__setattr__(self, "before", _kind(self.before))

    def flags(self, path: Path) -> bool:
        target = _first(path, self.before)
        if target is None:
            return False
        return all(op.kind != self.op.kind for op in path.ops[:target])

    def apply(self, path: Path) -> Path:
        if not self.flags(path):
            return path
        ops = list(path.ops)
        ops.insert(_first(path, self.before), self.op)
        return Path(tuple(ops))

    def to_json(self) -> dict:
        return {"type": "insert", "op": self.op.to_json(), "before": self.before.value}


_DESCRIPTOR_PARAMS = ("descriptor", "measure", "x", "row", "col", "left_key", "right_key")


def _remap_op(op: OperatorInstance, old: str, new: str) -> OperatorInstance:
    params = dict(op.params)
    for key in _DESCRIPTOR_PARAMS:
        if params.get(key) == old:
            params[key] = new
    for key in ("descriptors", "series"):
        if key in params:
            params[key] = tuple(new if d == old else d for d in params[key])
    if "expr" in params:
        params["expr"] = params["expr"].replace(f"[{old}]", f"[{new}]")
    return OperatorInstance(op.kind, params)


@dataclass(frozen=True)
class RemapDescriptor:
    old: str
    new: str

    def flags(self, path: Path) -> bool:
        return any(self.old in op.descriptors() for op in path.ops)

    def apply(self, path: Path) -> Path:
        return Path(tuple(_remap_op(op, self.old, self.new) for op in path.ops))

    def to_json(self) -> dict:
        return {"type": "remap", "old": self.old, "new": self.new}


EDIT_ORDER = (Reorder, Remove, Insert, RemapDescriptor)


def edit_from_json(doc: Mapping[str, Any] | None):
    if doc is None:
        return None
    kind = doc.get("type")
    if kind == "reorder":
        return Reorder(doc["before"], doc["after"])
    if kind == "remove":
        return Remove(doc["kind"])
    if kind == "insert":
        return Insert(OperatorInstance.from_json(doc["op"]), doc["before"])
    if kind == "remap":
        return RemapDescriptor(doc["old"], doc["new"])
    raise ValueError(f"unknown edit type {kind!r}")


@dataclass(frozen=True)
class ExperienceNote:
    pattern: str
    lesson: str
    edit: Reorder | Remove | Insert | RemapDescriptor | None = None

    def to_json(self) -> dict:
        return {"pattern": self.pattern, "lesson": self.lesson,
                "edit": self.edit.to_json() if self.edit else None}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "ExperienceNote":
        return cls(doc["pattern"], doc["lesson"], edit_from_json(doc.get("edit")))


# store ----------------------------------------------------------------------------------


@dataclass
class MemoryStore:
    records: list[ExecutionRecord] = field(default_factory=list)
    notes: dict[str, list[ExperienceNote]] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def notes_for(self, key: str) -> list[ExperienceNote]:
        return list(self.notes.get(key, ()))

    def add_notes(self, key: str, notes: Iterable[ExperienceNote]) -> list[ExperienceNote]:
        """Add notes not already present under ``key``; returns the ones added."""
        added = []
        with self._lock:
            bucket = self.notes.setdefault(key, [])
            for note in notes:
                if note not in bucket:
                    bucket.append(note)
                    added.append(note)
        return added

    def to_json(self) -> dict:
        with self._lock:
            return {
                "version": STORE_VERSION,
                "records": [r.to_json() for r in self.records],
                "notes": {k: [n.to_json() for n in v] for k, v in sorted(self.notes.items())},
            }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "MemoryStore":
        if doc.get("version") != STORE_VERSION:
            raise ValueError(f"unsupported memory version {doc.get('version')!r}")
        return cls([ExecutionRecord.from_json(r) for r in doc.get("records", [])],
                   {k: [ExperienceNote.from_json(n) for n in v]
                    for k, v in doc.get("notes", {}).items()})

    @classmethod
    def loads(cls, text: str) -> "MemoryStore":
        return cls.from_json(json.loads(text))


def record(store: MemoryStore, path: Path, feedback: Feedback, reward: float,
           trace: Sequence[StepTrace]) -> MemoryStore:
    """Append one record per CODE step (the failing step included)."""
    context = []
    new = []
    for step in trace:
        if step.flag == CODE:
            new.append(ExecutionRecord(path.signature, step.op, " ; ".join(context),
                                       step.outcome_digest, reward))
        context.append(step.render())
    with store._lock:
        store.records.extend(new)
    return store


def abstract(agent, recent: Sequence[ExecutionRecord], key: str) -> list[ExperienceNote]:
    """Distill at most three notes from recent records via the agent's Summarize role."""
    if not recent:
        raise ValueError("abstraction needs at least one record")
    raw = agent.summarize(key, [r.summary() for r in recent])
    notes = []
    for doc in raw[:3]:
        try:
            notes.append(ExperienceNote(key, str(doc["lesson"]), edit_from_json(doc.get("edit"))))
        except (KeyError, ValueError) as exc:
            raise AgentProtocolError(f"malformed note {doc!r}: {exc}") from exc
    return notes


def _valid(path: Path) -> bool:
    try:
        op_map = build_operation_map(path.ops)
    except (CyclicConstraints, NoValidOrder):
        return False
    return respects(op_map, path)


def adapt_candidates(candidates: Sequence[Path], notes: Sequence[ExperienceNote],
                     state: PlannerState) -> tuple[list[Path], PlannerState]:
    """Apply structured edits to matching candidates.

    Edits run in the order Reorder, Remove, Insert, RemapDescriptor. Edited
    paths that violate their own precedence rules are discarded. Remove
    replaces the original; other edits keep it.
    """
    edits = [n.edit for n in notes if n.edit is not None]
    if not edits:
        return list(candidates), state
    edits.sort(key=lambda e: EDIT_ORDER.index(type(e)))
    state = state.copy()
    paths = list(candidates)
    fresh: list[Path] = []
    for edit in edits:
        out: list[Path] = []
        for path in paths:
            if not edit.flags(path):
                out.append(path)
                continue
            edited = edit.apply(path)
            keep_original = not isinstance(edit, Remove)
            if edited != path and _valid(edited):
                if keep_original:
                    out.append(path)
                out.append(edited)
                fresh.append(edited)
            else:
                out.append(path)
        paths = list(dict.fromkeys(out))
    known = {p.signature for p in candidates}
    for path in dict.fromkeys(fresh):
        if path in paths and path.signature not in known:
            state.reset(path, structural_prior(path, notes=notes))
    return paths, state


# query signature ---------------------------------------------------------------------------


def signature(query: str, meta) -> str:
    """Value-agnostic key: sorted intent keywords plus the header-depth pair."""
    from .agent import intent_keywords

    words = intent_keywords(query)
    d_c, d_r = meta.header_depths
    return f"{'+'.join(words) or 'none'}|d{d_c}x{d_r}"
