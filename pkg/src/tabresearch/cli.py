"""Command-line front end: ``run``, ``inspect`` and ``simulate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.resources import files
from pathlib import Path as FsPath
from typing import Sequence

from .errors import TabResearchError
from .loop import EngineConfig, run_query
from .memory import MemoryStore
from .planner import PlannerState, UPDATE_MODES
from .simulate import RewardSpec, simulate
from .structure import analyze, render_triples
from .table import RawGrid, ingest_csv, ingest_grid

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_ABSTAIN = 0, 1, 2

# Published machine-report schema (JSON Schema draft 2020-12).
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["answer", "abstain", "calls_used", "iterations", "candidates", "paths"],
    "properties": {
        "answer": {},
        "abstain": {"type": "boolean"},
        "calls_used": {"type": "integer", "minimum": 0},
        "iterations": {"type": "integer", "minimum": 0},
        "candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "reward", "valid"],
                "properties": {"path": {"type": "string"}, "reward": {"type": "number"},
                               "valid": {"type": "boolean"}},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["r_hat", "n", "prior"],
                "properties": {"r_hat": {"type": "number"}, "n": {"type": "integer", "minimum": 0},
                               "prior": {"type": "number"}},
            },
        },
    },
}


def load_table(ref: str, delimiter: str = ",") -> RawGrid:
    """Read a table from a path, or from a bundled fixture name such as ``F1``."""
    path = FsPath(ref)
    if not path.exists():
        bundled = files("tabresearch.fixtures")
        for ext in (".json", ".csv"):
            candidate = bundled.joinpath(ref + ext)
            if candidate.is_file():
                data = candidate.read_bytes()
                return ingest_csv(data, delimiter) if ext == ".csv" else ingest_grid(data)
        raise FileNotFoundError(f"no such table: {ref}")
    data = path.read_bytes()
    if path.suffix.lower() in (".csv", ".tsv", ".txt"):
        return ingest_csv(data, "\t" if path.suffix.lower() == ".tsv" else delimiter)
    return ingest_grid(data)


def _provider(name: str, seed: int):
    if name == "remote":
        from .agent import RemoteProvider

        return RemoteProvider.from_env()
    from .agent import mock_agent

    return mock_agent(seed)


def _load_memory(path: str | None) -> tuple[PlannerState, MemoryStore]:
    if not path or not FsPath(path).exists():
        return PlannerState(), MemoryStore()
    doc = json.loads(FsPath(path).read_text(encoding="utf-8"))
    return PlannerState.from_json(doc["planner"]), MemoryStore.from_json(doc["memory"])


def _save_memory(path: str, state: PlannerState, memory: MemoryStore) -> None:
    doc = {"version": 1, "planner": state.to_json(), "memory": memory.to_json()}
    FsPath(path).write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def cmd_run(args) -> int:
    config = EngineConfig(alpha=args.alpha, eta=args.eta, update_mode=args.update_mode, k=args.k,
                          K=args.K, budget=args.budget, m_votes=args.m_votes, seed=args.seed)
    grid = load_table(args.table)
    state, memory = _load_memory(args.memory)
    report = run_query(grid, args.query, config, _provider(args.provider, args.seed),
                       planner_state=state, memory=memory)
    if args.memory:
        _save_memory(args.memory, state, memory)
    if args.trace_dir:
        out = FsPath(args.trace_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (sig, steps) in enumerate(sorted(report.trace.items())):
            (out / f"path_{i:02d}.json").write_text(
                json.dumps({"path": sig, "steps": steps}, ensure_ascii=False, indent=2),
                encoding="utf-8")
    if args.output == "machine":
        print(report.dumps())
    else:
        print("answer: " + ("ABSTAIN" if report.abstain else str(report.answer_text)))
        print(f"calls_used: {report.calls_used}")
        print(f"iterations: {report.iterations}")
        if report.paths:
            print(f"{'r_hat':>8} {'n':>4} {'prior':>6}  path")
            for sig, s in report.paths.items():
                print(f"{s['r_hat']:8.4f} {s['n']:4d} {s['prior']:6.3f}  {sig}")
    return EXIT_ABSTAIN if report.abstain else EXIT_OK


def _forest_lines(layout, axis: str) -> list[str]:
    lines = []

    def walk(node, depth):
        lines.append("  " * depth + f"{node.label}  [{node.span[0]}..{node.span[1]}]")
        for child_id in node.children:
            walk(layout.node(child_id), depth + 1)

    for root in layout.roots(axis):
        walk(root, 1)
    return lines


def cmd_inspect(args) -> int:
    s = analyze(load_table(args.table))
    d_c, d_r = s.layout.d_c, s.layout.d_r
    if args.output == "machine":
        print(json.dumps({
            "d_c": d_c, "d_r": d_r, "nodes": len(s.graph.nodes) + 1, "edges": len(s.graph.edges),
            "triples": [t.render() for t in s.triples], "meta": s.meta.digest(),
            "descriptors": list(s.view.descriptors()),
        }, ensure_ascii=False, sort_keys=True))
        return EXIT_OK
    print(f"layout: d_c={d_c} d_r={d_r}")
    print("column headers:")
    print("\n".join(_forest_lines(s.layout, "col")) or "  (none)")
    print("row headers:")
    print("\n".join(_forest_lines(s.layout, "row")) or "  (none)")
    print("meta:")
    print("  " + s.meta.digest().replace("\n", "\n  "))
    print(f"triples ({len(s.triples)}):")
    print(render_triples(s.triples))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.rewards:
        spec = RewardSpec.parse(args.rewards)
        if args.arms is not None and args.arms != spec.arms:
            raise TabResearchError(f"--arms {args.arms} disagrees with {spec.arms} reward values")
    else:
        arms = 8 if args.arms is None else args.arms
        spec = RewardSpec("bernoulli", tuple([0.5] * (arms - 1) + [0.8]) if arms >= 1 else ())
    result = simulate(spec, args.batches, args.per_batch, args.alpha, args.update_mode,
                      args.seed, args.eta)
    if args.output == "machine":
        print(json.dumps(result.to_json(), sort_keys=True))
    elif args.output == "csv":
        sys.stdout.write(result.to_csv())
    else:
        width = result.frequencies.shape[1]
        print("arm " + " ".join(f"b{b + 1:<4}" for b in range(width)))
        for a, row in enumerate(result.frequencies):
            print(f"{a:<3} " + " ".join(f"{x:5.2f}" for x in row))
        for key, value in result.summary().items():
            print(f"{key}: {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabresearch",
                                     description="Closed-loop analytical queries over unstructured tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="answer a query over a table")
    run.add_argument("--table", required=True, help="grid JSON, CSV, or a bundled fixture name")
    run.add_argument("--query", required=True)
    run.add_argument("--alpha", type=float, default=1.0)
    run.add_argument("--eta", type=float, default=0.3)
    run.add_argument("--update-mode", choices=UPDATE_MODES, default="mean")
    run.add_argument("--k", type=int, default=1, help="paths executed per iteration")
    run.add_argument("--K", type=int, default=8, help="candidate paths enumerated")
    run.add_argument("--budget", type=int, default=12, help="agent call limit")
    run.add_argument("--m-votes", type=int, default=3)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--memory", help="JSON file persisting planner state and memory")
    run.add_argument("--provider", choices=("mock", "remote"), default="mock")
    run.add_argument("--output", choices=("human", "machine"), default="human")
    run.add_argument("--trace-dir", help="write one trace file per executed path")
    run.set_defaults(func=cmd_run)

    insp = sub.add_parser("inspect", help="show header layout and triples")
    insp.add_argument("--table", required=True)
    insp.add_argument("--output", choices=("human", "machine"), default="human")
    insp.set_defaults(func=cmd_inspect)

    sim = sub.add_parser("simulate", help="planner-only path selection dynamics")
    sim.add_argument("--arms", type=int)
    sim.add_argument("--batches", type=int, default=10)
    sim.add_argument("--per-batch", type=int, default=50)
    sim.add_argument("--rewards", help='e.g. "bernoulli:0.5,0.5,0.8" or "fixed:1,0"')
    sim.add_argument("--alpha", type=float, default=1.0)
    sim.add_argument("--eta", type=float, default=0.3)
    sim.add_argument("--update-mode", choices=UPDATE_MODES, default="mean")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", choices=("human", "machine", "csv"), default="human")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TabResearchError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
