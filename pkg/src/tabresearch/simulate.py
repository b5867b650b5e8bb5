"""Planner-only bandit simulation of path-selection dynamics.

Synthetic arms stand in for paths; rewards go straight into
:func:`update_expectation`, with no tables and no agent involved.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRewardSpec
from .planner import MEAN, PlannerConfig, PlannerState, select_top_k

BERNOULLI = "bernoulli"
FIXED = "fixed"


@dataclass(frozen=True)
class RewardSpec:
    mode: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in (BERNOULLI, FIXED):
            raise InvalidRewardSpec(f"reward mode must be {BERNOULLI} or {FIXED}")
        if len(self.values) < 2:
            raise InvalidRewardSpec("need at least two arms")
        if not all(0.0 <= v <= 1.0 for v in self.values):
            raise InvalidRewardSpec("arm rewards must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "RewardSpec":
        """``"bernoulli:0.8,0.5"`` or ``"fixed:1,0"``."""
        mode, sep, rest = text.partition(":")
        if not sep:
            raise InvalidRewardSpec(f"expected MODE:v1,v2,... got {text!r}")
        try:
            values = tuple(float(v) for v in rest.split(",") if v.strip())
        except ValueError as exc:
            raise InvalidRewardSpec(str(exc)) from exc
        return cls(mode.strip().lower(), values)

    @property
    def arms(self) -> int:
        return len(self.values)

    @property
    def best(self) -> int:
        return int(np.argmax(self.values))


@dataclass(frozen=True)
class _Arm:
    signature: str


@dataclass(frozen=True)
class SimulationResult:
    frequencies: np.ndarray  # arms x batches
    best_arm: int

    @property
    def best_final(self) -> float:
        return float(self.frequencies[self.best_arm, -1])

    @property
    def residual(self) -> float:
        return 1.0 - self.best_final

    def summary(self) -> dict:
        return {"best_arm": self.best_arm, "best_final_frequency": self.best_final,
                "residual_exploration": self.residual}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm"] + [f"batch{b + 1}" for b in range(self.frequencies.shape[1])])
        for a, row in enumerate(self.frequencies):
            w.writerow([a] + [repr(float(x)) for x in row])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"frequencies": self.frequencies.tolist(), **self.summary()}


def simulate(spec: RewardSpec, batches: int = 10, per_batch: int = 50, alpha: float = 1.0,
             update_mode: str = MEAN, seed: int = 0, eta: float = 0.3) -> SimulationResult:
    if batches < 1 or per_batch < 1:
        raise InvalidRewardSpec("batches and per_batch must be >= 1")
    config = PlannerConfig(alpha=alpha, eta=eta, update_mode=update_mode, k=1)
    rng = np.random.default_rng(seed)
    arms = [_Arm(f"arm{i}") for i in range(spec.arms)]
    index = {a.signature: i for i, a in enumerate(arms)}
    state = PlannerState()
    counts = np.zeros((spec.arms, batches))
    for b in range(batches):
        for _ in range(per_batch):
            (arm,) = select_top_k(state, arms, config)
            i = index[arm.signature]
            p = spec.values[i]
            reward = float(rng.random() < p) if spec.mode == BERNOULLI else p
            state.commit(arm, reward, config)
            counts[i, b] += 1
    return SimulationResult(counts / per_batch, spec.best)
