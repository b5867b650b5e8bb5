"""Closed-loop analytical query engine for unstructured tables."""

from .agent import AgentSession, CallBudget, MockProvider, RemoteProvider, call, mock_agent
from .errors import TabResearchError
from .estimator import TableStructureTransformer, TabularResearcher, check_grid
from .executor import (
    ChartSpec,
    Feedback,
    Grouped,
    RecordList,
    Scalar,
    apply_operator,
    check_type,
    compute_reward,
    run_path,
)
from .loop import Abstain, AnswerCandidate, EngineConfig, EngineReport, majority_vote, run_query
from .memory import MemoryStore, abstract, adapt_candidates, record, signature
from .opbank import OperatorKind, Path, build_operation_map, enumerate_paths, select_operations
from .planner import (
    PathStats,
    PlannerConfig,
    PlannerState,
    expectation_score,
    score_bound,
    select_top_k,
    update_expectation,
)
from .simulate import RewardSpec, simulate
from .structure import analyze, build_meta_graph, detect_headers, linearize_triples, project_view
from .table import CellValue, GridCell, RawGrid, infer_value, ingest_csv, ingest_grid, resolve_cell

__version__ = "0.1.0"

__all__ = [
    "Abstain", "AgentSession", "AnswerCandidate", "CallBudget", "CellValue", "ChartSpec",
    "EngineConfig", "EngineReport", "Feedback", "GridCell", "Grouped", "MemoryStore",
    "MockProvider", "OperatorKind", "Path", "PathStats", "PlannerConfig", "PlannerState",
    "RawGrid", "RecordList", "RemoteProvider", "RewardSpec", "Scalar", "TabResearchError",
    "TableStructureTransformer", "TabularResearcher", "abstract", "adapt_candidates", "analyze",
    "apply_operator", "build_meta_graph", "build_operation_map", "call", "check_grid",
    "check_type", "compute_reward", "detect_headers", "enumerate_paths", "expectation_score",
    "infer_value", "ingest_csv", "ingest_grid", "linearize_triples", "majority_vote", "mock_agent",
    "project_view", "record", "resolve_cell", "run_path", "run_query", "score_bound",
    "select_operations", "select_top_k", "signature", "simulate", "update_expectation",
]
