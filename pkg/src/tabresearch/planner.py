"""Path-level bandit: expectation-aware scoring, selection and updates.

Each candidate path is an arm. Its score adds a prior-weighted exploration
bonus to the running reward estimate::

    score = r_hat + alpha * prior * sqrt(log(total_n + 1) / (1 + n))

The ``+ 1`` inside the logarithm keeps the score defined before any path has
run; the score stays below ``r_max + alpha * sqrt(log(total_n + 1))`` and the
bonus decays to zero as ``n`` grows.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import EmptyCandidates, RewardOutOfRange
from .opbank import OperationMap, OperatorKind, Path

EMA = "ema"
MEAN = "mean"
UPDATE_MODES = (EMA, MEAN)

PRIOR_PENALTY = 0.8
PRIOR_FLOOR = 0.1
STATE_VERSION = 1


@dataclass(frozen=True)
class PathStats:
    r_hat: float = 0.0
    n: int = 0
    prior: float = 1.0
    # running reward total for MEAN mode; None means "derive from r_hat * n"
    r_sum: float | None = None

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 0:
            raise ValueError("n must be a non-negative integer")
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError("prior must lie in [0, 1]")
        if self.r_hat < 0.0:
            raise ValueError("r_hat must be non-negative")


@dataclass(frozen=True)
class PlannerConfig:
    alpha: float = 1.0
    eta: float = 0.3
    r_max: float = 1.0
    update_mode: str = MEAN
    k: int = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.r_max > 0:
            raise ValueError("r_max must be > 0")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {UPDATE_MODES}")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError("k must be an integer >= 1")


def exploration_term(prior: float, n: int, total_n: int, alpha: float) -> float:
    return alpha * prior * math.sqrt(math.log1p(total_n) / (1 + n))


def expectation_score(stats: PathStats, total_n: int, alpha: float) -> float:
    return stats.r_hat + exploration_term(stats.prior, stats.n, total_n, alpha)


def score_bound(r_max: float, alpha: float, total_n: int) -> float:
    if not r_max > 0:
        raise ValueError("r_max must be > 0")
    return r_max + alpha * math.sqrt(math.log1p(total_n))


def update_expectation(stats: PathStats, reward: float, config: PlannerConfig) -> PathStats:
    if not 0.0 <= reward <= config.r_max:
        raise RewardOutOfRange(f"reward {reward} outside [0, {config.r_max}]")
    total = (stats.r_sum if stats.r_sum is not None else stats.n * stats.r_hat) + reward
    if config.update_mode == EMA:
        r_hat = (1.0 - config.eta) * stats.r_hat + config.eta * reward
    else:
        r_hat = total / (stats.n + 1)
    r_hat = min(max(r_hat, 0.0), config.r_max)
    return replace(stats, r_hat=r_hat, n=stats.n + 1, r_sum=total)


# priors --------------------------------------------------------------------------


def _first(kinds: Sequence[OperatorKind], kind: str) -> int | None:
    for i, k in enumerate(kinds):
        if k.value == kind:
            return i
    return None


def note_matches(note, path: Path) -> bool:
    """Whether ``path`` shows the anti-pattern an experience note warns about."""
    edit = getattr(note, "edit", None)
    if edit is None:
        return False
    return edit.flags(path)


def structural_prior(path: Path, op_map: OperationMap | None = None, notes: Iterable = ()) -> float:
    prior = 1.0
    for note in notes:
        if note_matches(note, path):
            prior *= PRIOR_PENALTY
    return max(prior, PRIOR_FLOOR)


# state -------------------------------------------------------------------------------


class PlannerState:
    """Per-signature path statistics with a maintained execution total.

    Commits go through :meth:`commit`, which holds a lock so concurrent path
    executions serialise their read-modify-write.
    """

    def __init__(self, stats: dict[str, PathStats] | None = None):
        self.stats: dict[str, PathStats] = dict(stats or {})
        self.total_n = sum(s.n for s in self.stats.values())
        self._lock = threading.Lock()

    def get(self, signature: str) -> PathStats | None:
        return self.stats.get(signature)

    def ensure(self, path: Path, prior: float) -> PathStats:
        with self._lock:
            if path.signature not in self.stats:
                self.stats[path.signature] = PathStats(prior=prior)
            return self.stats[path.signature]

    def reset(self, path: Path, prior: float) -> None:
        with self._lock:
            old = self.stats.get(path.signature)
            if old is not None:
                self.total_n -= old.n
            self.stats[path.signature] = PathStats(prior=prior)

    def set_prior(self, signature: str, prior: float) -> None:
        with self._lock:
            self.stats[signature] = replace(self.stats[signature], prior=prior)

    def commit(self, path: Path, reward: float, config: PlannerConfig) -> PathStats:
        with self._lock:
            old = self.stats.get(path.signature, PathStats())
            new = update_expectation(old, reward, config)
            self.stats[path.signature] = new
            self.total_n += 1
            return new

    def snapshot(self) -> tuple[dict[str, PathStats], int]:
        with self._lock:
            return dict(self.stats), self.total_n

    def absorb(self, other: "PlannerState") -> None:
        """Take over every entry of ``other`` that differs from ours."""
        stats, _ = other.snapshot()
        with self._lock:
            for sig, s in stats.items():
                old = self.stats.get(sig)
                if old != s:
                    self.total_n += s.n - (old.n if old else 0)
                    self.stats[sig] = s

    def copy(self) -> "PlannerState":
        stats, _ = self.snapshot()
        return PlannerState(stats)

    def to_json(self) -> dict:
        stats, _ = self.snapshot()
        return {
            "version": STATE_VERSION,
            "paths": {sig: {"r_hat": s.r_hat, "n": s.n, "prior": s.prior, "r_sum": s.r_sum}
                      for sig, s in sorted(stats.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PlannerState":
        if doc.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported planner state version {doc.get('version')!r}")
        return cls({sig: PathStats(float(v["r_hat"]), int(v["n"]), float(v["prior"]),
                                   None if v.get("r_sum") is None else float(v["r_sum"]))
                    for sig, v in doc.get("paths", {}).items()})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)

    def __eq__(self, other) -> bool:
        return isinstance(other, PlannerState) and self.snapshot() == other.snapshot()


def rank(state: PlannerState, candidates: Sequence[Path], config: PlannerConfig,
         notes: Iterable = ()) -> list[tuple[float, Path]]:
    """Score all candidates (fresh ones get zero-reward stats) and order them."""
    if not candidates:
        raise EmptyCandidates("no candidate paths")
    notes = list(notes)
    for path in candidates:
        state.ensure(path, structural_prior(path, notes=notes))
    stats, total_n = state.snapshot()
    scored = [(expectation_score(stats[p.signature], total_n, config.alpha), p) for p in candidates]
    scored.sort(key=lambda sp: (-sp[0], -stats[sp[1].signature].prior, sp[1].signature))
    return scored


def select_top_k(state: PlannerState, candidates: Sequence[Path], config: PlannerConfig,
                 notes: Iterable = ()) -> list[Path]:
    """The ``k`` best candidates by score, then prior, then signature."""
    return [p for _, p in rank(state, candidates, config, notes)[:config.k]]
