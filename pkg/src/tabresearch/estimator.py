"""scikit-learn style facade over the engine.

``fit`` binds a table, learning its structure and resetting the planner and
memory. ``predict`` then answers queries against it. Planner state and memory
persist across ``predict`` calls, which is where the continual learning happens.
"""

from __future__ import annotations

from pathlib import Path as FsPath
from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .loop import EngineConfig, EngineReport, run_query
from .memory import MemoryStore
from .planner import PlannerState
from .structure import TableStructure, analyze
from .table import RawGrid, ingest_csv, ingest_grid


def check_grid(X) -> RawGrid:
    """Coerce a grid, a grid document (bytes/str) or a file path to a RawGrid."""
    if isinstance(X, RawGrid):
        return X
    if isinstance(X, FsPath) or (isinstance(X, str) and not X.lstrip().startswith("{")
                                 and FsPath(X).suffix):
        path = FsPath(X)
        data = path.read_bytes()
        return ingest_csv(data) if path.suffix.lower() == ".csv" else ingest_grid(data)
    if isinstance(X, (bytes, str)):
        return ingest_grid(X)
    raise TypeError(f"expected a RawGrid, grid document or path, got {type(X).__name__}")


def check_grids(X) -> list[RawGrid]:
    if isinstance(X, (RawGrid, bytes, str, FsPath)):
        return [check_grid(X)]
    return [check_grid(x) for x in X]


def check_queries(queries) -> list[str]:
    if isinstance(queries, str):
        return [queries]
    out = list(queries)
    if not all(isinstance(q, str) for q in out):
        raise TypeError("queries must be strings")
    return out


class TableStructureTransformer(BaseEstimator, TransformerMixin):
    """Stateless transformer: grids -> :class:`TableStructure` bundles."""

    def fit(self, X, y=None):
        check_grids(X)
        return self

    def transform(self, X):
        return [analyze(g) for g in check_grids(X)]


class TabularResearcher(BaseEstimator):
    """Answer analytical queries over one table.

    Hyperparameters mirror :class:`EngineConfig`. ``provider`` defaults to the
    deterministic mock seeded with ``seed``.
    """

    def __init__(self, alpha=1.0, eta=0.3, update_mode="mean", k=1, K=8, budget=12, m_votes=3,
                 seed=0, think_paths=1, provider=None):
        self.alpha = alpha
        self.eta = eta
        self.update_mode = update_mode
        self.k = k
        self.K = K
        self.budget = budget
        self.m_votes = m_votes
        self.seed = seed
        self.think_paths = think_paths
        self.provider = provider

    def _config(self) -> EngineConfig:
        return EngineConfig(alpha=self.alpha, eta=self.eta, update_mode=self.update_mode, k=self.k,
                            K=self.K, budget=self.budget, m_votes=self.m_votes, seed=self.seed,
                            think_paths=self.think_paths)

    def fit(self, X, y=None):
        self.config_ = self._config()
        self.grid_ = check_grid(X)
        self.structure_: TableStructure = analyze(self.grid_)
        self.planner_state_ = PlannerState()
        self.memory_ = MemoryStore()
        self.reports_: list[EngineReport] = []
        return self

    def transform(self, X=None) -> TableStructure:
        check_is_fitted(self, "structure_")
        return self.structure_ if X is None else analyze(check_grid(X))

    def predict_reports(self, queries: Iterable[str]) -> list[EngineReport]:
        check_is_fitted(self, "structure_")
        reports = [run_query(self.grid_, q, self.config_, self.provider,
                             planner_state=self.planner_state_, memory=self.memory_)
                   for q in check_queries(queries)]
        self.reports_.extend(reports)
        return reports

    def predict(self, queries) -> list:
        """Typed answer per query; ``None`` where the engine abstained."""
        return [None if r.abstain else r.answer_value for r in self.predict_reports(queries)]
