"""Command-line entry point.

Subcommands: plan (gen/validate), run, compare, detect, report,
store stats, shim-check. Option precedence is flags > environment >
config file (a flat key=value file passed with --config).

Exit codes for run/compare: 0 success, 2 session crash, 3 incomparable
traces. shim-check exits nonzero when any vector fails.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import shutil
import sys
from pathlib import Path

from . import shimcheck
from .agent import make_agent
from .backend import BackendConfig
from .errors import BranchBenchError, IncomparableTracesError, PlanValidationError
from .interference import detect as detect_interference
from .metrics import ComparisonTable, MetricsReport, compare, compute, emit
from .plan import BranchSpec, ExplorationPlan, make_random_plan
from .store import DEFAULT_CHUNK_SIZE, Store
from .strategy import STRATEGIES, SessionResult, run_session
from .trace import SessionTrace

ENV_STORE = "BRANCHBENCH_STORE"

CONFIG_KEYS = (
    "plan",
    "strategy",
    "backend",
    "shim_cmd",
    "store",
    "seed",
    "out",
    "agent",
    "corpus",
    "chunk_size",
    "execute_timeout_ms",
    "snapshot_timeout_ms",
    "branch_point_bias",
)


def read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BranchBenchError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise BranchBenchError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve_option(flag_value, key: str, config: dict[str, str], env_var: str | None = None):
    """flags > environment > config file."""
    if flag_value is not None:
        return flag_value
    if env_var and os.environ.get(env_var):
        return os.environ[env_var]
    return config.get(key)


def _backend_config(args, config: dict[str, str]) -> BackendConfig:
    kind = resolve_option(args.backend, "backend", config) or "toy"
    shim_cmd = resolve_option(getattr(args, "shim_cmd", None), "shim_cmd", config)
    timeout = int(
        resolve_option(getattr(args, "timeout_ms", None), "execute_timeout_ms", config)
        or 120_000
    )
    return BackendConfig(
        kind=kind,
        command=shim_cmd,
        execute_timeout_ms=timeout,
        snapshot_timeout_ms=timeout,
    )


def _agent_for(args, config: dict[str, str], plan: ExplorationPlan):
    if not any(b.agent_driven for b in plan.branches):
        return None
    kind = resolve_option(getattr(args, "agent", None), "agent", config) or "synthetic"
    corpus = resolve_option(getattr(args, "corpus", None), "corpus", config)
    seed = plan.seed
    return make_agent(kind, seed=seed, corpus=corpus)


def _load_plan(args, config: dict[str, str]) -> ExplorationPlan:
    path = resolve_option(args.plan, "plan", config)
    if not path:
        raise BranchBenchError("a plan file is required (--plan)")
    plan = ExplorationPlan.load(path)
    seed = resolve_option(getattr(args, "seed", None), "seed", config)
    if seed is not None:
        plan.seed = int(seed)
    return plan


def _out_dir(args, config: dict[str, str]) -> Path:
    out = resolve_option(args.out, "out", config)
    if not out:
        raise BranchBenchError("an output directory is required (--out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, artifacts: dict[str, str]) -> None:
    doc = {name: description for name, description in sorted(artifacts.items())}
    (out / "manifest").write_text(json.dumps(doc, indent=2) + "\n", "utf-8")


def materialize_plan(plan: ExplorationPlan, result: SessionResult) -> ExplorationPlan:
    """Freeze a generation run into a scripted plan: the same cells (debug
    attempts included) and the branch points the run actually took, so every
    strategy replays identical code."""
    starts = {e["branch_idx"]: e for e in result.trace.iter_type("branch_start")}
    cells: dict[int, list] = {}
    for event in result.trace.iter_type("execute_cell"):
        from .backend import CellSource

        cells.setdefault(event["branch_idx"], []).append(
            CellSource(event["cell_source"], event.get("step_label"))
        )
    branches = []
    for idx in sorted(starts):
        if idx not in cells:
            continue
        point = starts[idx]["branch_point_index"]
        branches.append(
            BranchSpec("root" if idx == 0 else point, cells=cells[idx])
        )
    return ExplorationPlan(task=plan.task, seed=plan.seed, branches=branches)


def run_one_strategy(
    plan: ExplorationPlan,
    strategy: str,
    backend_config: BackendConfig,
    store_path: Path | None,
    agent,
    chunk_size: int,
    bias: str,
) -> tuple[SessionResult, Store | None]:
    store = None
    if strategy == "checkpoint":
        assert store_path is not None
        store = Store(store_path, chunk_size=chunk_size)
    result = run_session(
        plan,
        strategy,
        backend_config=backend_config,
        store=store,
        agent=agent,
        branch_point_bias=bias,
    )
    return result, store


# --- subcommands ---

def cmd_plan(args, config: dict[str, str]) -> int:
    if args.plan_action == "gen":
        plan = make_random_plan(
            seed=args.seed,
            n_branches=args.branches,
            max_cells=args.max_cells,
            min_cells=args.min_cells,
        )
        plan.validate()
        plan.save(args.out)
        print(f"wrote {args.out} ({args.branches} branches, seed {args.seed})")
        return 0
    # validate
    try:
        plan = ExplorationPlan.load(args.file)
    except PlanValidationError as exc:
        field = f" [{exc.field}]" if exc.field else ""
        print(f"invalid plan: {exc}{field}", file=sys.stderr)
        return 1
    print(f"ok: {len(plan.branches)} branches, seed {plan.seed}, digest {plan.digest()[:12]}")
    return 0


def cmd_run(args, config: dict[str, str]) -> int:
    plan = _load_plan(args, config)
    out = _out_dir(args, config)
    strategy = resolve_option(args.strategy, "strategy", config)
    if strategy not in STRATEGIES:
        raise BranchBenchError(f"--strategy must be one of {', '.join(STRATEGIES)}")
    store_path = resolve_option(args.store, "store", config, env_var=ENV_STORE)
    if strategy == "checkpoint" and not store_path:
        raise BranchBenchError("the checkpoint strategy requires --store (or BRANCHBENCH_STORE)")
    chunk_size = int(resolve_option(args.chunk_size, "chunk_size", config) or DEFAULT_CHUNK_SIZE)
    bias = resolve_option(args.branch_point_bias, "branch_point_bias", config) or "uniform"
    agent = _agent_for(args, config, plan)
    result, store = run_one_strategy(
        plan, strategy, _backend_config(args, config),
        Path(store_path) if store_path else None, agent, chunk_size, bias
    )
    trace_path = out / f"trace-{strategy}.jsonl"
    result.trace.save(trace_path)
    stats = store.storage_stats() if store else None
    report = compute(result.trace, store_stats=stats)
    emit(report, "json", out / f"metrics-{strategy}.json")
    _write_manifest(
        out,
        {
            trace_path.name: "session trace (JSON lines)",
            f"metrics-{strategy}.json": "metrics report",
        },
    )
    print(f"{strategy}: e2e {report.e2e_ms} ms, {report.executed_cells} cells "
          f"({report.replayed_cells} replayed), peak {report.peak_cells} cells / "
          f"{report.peak_vars} vars{' [CRASHED]' if result.crashed else ''}")
    return 2 if result.crashed else 0


def cmd_compare(args, config: dict[str, str]) -> int:
    plan = _load_plan(args, config)
    out = _out_dir(args, config)
    chunk_size = int(resolve_option(args.chunk_size, "chunk_size", config) or DEFAULT_CHUNK_SIZE)
    bias = resolve_option(args.branch_point_bias, "branch_point_bias", config) or "uniform"
    backend_config = _backend_config(args, config)
    agent = _agent_for(args, config, plan)
    artifacts: dict[str, str] = {}

    if any(b.agent_driven for b in plan.branches):
        # One generation pass; every strategy then replays identical cells.
        generation = run_session(plan, "restart", backend_config=backend_config, agent=agent)
        if generation.crashed:
            print("generation pass crashed; see trace-generation.jsonl", file=sys.stderr)
            generation.trace.save(out / "trace-generation.jsonl")
            return 2
        plan = materialize_plan(plan, generation)
        plan.save(out / "plan-materialized.json")
        artifacts["plan-materialized.json"] = "scripted plan frozen from the generation pass"

    def one(strategy: str):
        store_path = out / f"store-{strategy}"
        if store_path.exists():
            shutil.rmtree(store_path)  # rebuilt from scratch so reruns are identical
        return strategy, run_one_strategy(
            plan, strategy, backend_config, store_path, None, chunk_size, bias
        )

    results: dict[str, tuple[SessionResult, Store | None]] = {}
    if args.parallel:
        with concurrent.futures.ThreadPoolExecutor(max_workers=3) as pool:
            for strategy, payload in pool.map(one, STRATEGIES):
                results[strategy] = payload
    else:
        for strategy in STRATEGIES:
            results[strategy] = one(strategy)[1]

    reports: dict[str, MetricsReport] = {}
    crashed = False
    for strategy, (result, store) in results.items():
        crashed = crashed or result.crashed
        result.trace.save(out / f"trace-{strategy}.jsonl")
        artifacts[f"trace-{strategy}.jsonl"] = "session trace (JSON lines)"
        stats = store.storage_stats() if store else None
        interference = None
        if strategy == "continue" and not args.no_detect:
            interference = detect_interference(result.trace)
            emit_path = out / "interference.json"
            emit_path.write_text(
                json.dumps(interference.to_json(), indent=2) + "\n", "utf-8"
            )
            artifacts["interference.json"] = "branch interference report (continue trace)"
        reports[strategy] = compute(result.trace, store_stats=stats, interference=interference)
        emit(reports[strategy], "json", out / f"metrics-{strategy}.json")
        artifacts[f"metrics-{strategy}.json"] = "metrics report"

    try:
        table = compare(reports)
    except IncomparableTracesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    emit(table, "json", out / "comparison.json")
    emit([reports[s] for s in STRATEGIES], "csv", out / "comparison.csv")
    emit(table, "svg", out / "comparison.svg")
    (out / "comparison.txt").write_text(table.table() + "\n", "utf-8")
    artifacts.update(
        {
            "comparison.json": "strategy comparison table",
            "comparison.csv": "per-strategy metrics rows",
            "comparison.svg": "grouped bar chart",
            "comparison.txt": "human-readable comparison",
        }
    )
    _write_manifest(out, artifacts)
    print(table.table())
    return 2 if crashed else 0


def cmd_detect(args, config: dict[str, str]) -> int:
    trace = SessionTrace.load(args.trace)
    out = _out_dir(args, config)
    if trace.strategy != "continue":
        print(
            f"warning: trace was recorded under {trace.strategy!r}; that strategy "
            "restores exact branch-point state, so zero interferences are expected",
            file=sys.stderr,
        )
    backend_factory = None
    shim_cmd = resolve_option(getattr(args, "shim_cmd", None), "shim_cmd", config)
    if shim_cmd:
        from .backend import ExternalBackend

        backend_factory = lambda: ExternalBackend(  # noqa: E731
            BackendConfig(kind="external", command=shim_cmd)
        )
    report = detect_interference(trace, backend_factory)
    (out / "interference.json").write_text(json.dumps(report.to_json(), indent=2) + "\n", "utf-8")
    (out / "interference.txt").write_text(report.table() + "\n", "utf-8")
    _write_manifest(
        out,
        {
            "interference.json": "branch interference report",
            "interference.txt": "human-readable interference table",
        },
    )
    print(report.table())
    return 0


def cmd_report(args, config: dict[str, str]) -> int:
    reports = []
    for path in args.trace:
        trace = SessionTrace.load(path)
        reports.append(compute(trace))
    payload: list[MetricsReport] | MetricsReport = reports if len(reports) > 1 else reports[0]
    data = emit(payload, args.format, path=args.out)
    if args.out is None:
        sys.stdout.write(data.decode("utf-8"))
    else:
        print(f"wrote {args.out}")
    return 0


def cmd_store(args, config: dict[str, str]) -> int:
    store_path = resolve_option(args.store, "store", config, env_var=ENV_STORE)
    if not store_path:
        raise BranchBenchError("--store (or BRANCHBENCH_STORE) is required")
    store = Store(store_path)
    stats = store.storage_stats()
    doc = stats.to_json()
    doc["commit_count"] = store.commit_count()
    print(json.dumps(doc, indent=2))
    return 0


def cmd_shim_check(args, config: dict[str, str]) -> int:
    command = args.shim_cmd or resolve_option(None, "shim_cmd", config)
    results = shimcheck.run_suite(command)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        detail = f": {result.detail}" if result.detail else ""
        print(f"{status} {result.name}{detail}")
        failed += 0 if result.passed else 1
    print(f"suite {shimcheck.suite_hash()[:16]} — {len(results) - failed}/{len(results)} vectors passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchbench",
        description="Compare restart/continue/checkpoint strategies for branched sessions",
    )
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="generate or validate plan files")
    plan_sub = plan.add_subparsers(dest="plan_action", required=True)
    gen = plan_sub.add_parser("gen", help="generate a seeded random plan")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--branches", type=int, default=10)
    gen.add_argument("--max-cells", type=int, default=10)
    gen.add_argument("--min-cells", type=int, default=1)
    gen.add_argument("--out", required=True)
    validate = plan_sub.add_parser("validate", help="check a plan file")
    validate.add_argument("file")

    def add_run_options(p, with_strategy: bool):
        p.add_argument("--plan")
        if with_strategy:
            p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--backend", choices=("toy", "external"))
        p.add_argument("--shim-cmd", help="launch command for an external backend")
        p.add_argument("--store")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--agent", choices=("synthetic", "replay", "llm"))
        p.add_argument("--corpus", help="replay corpus path")
        p.add_argument("--chunk-size", type=int)
        p.add_argument("--timeout-ms", type=int)
        p.add_argument("--branch-point-bias", choices=("uniform", "recent"))

    run = sub.add_parser("run", help="run one strategy over a plan")
    add_run_options(run, with_strategy=True)

    comp = sub.add_parser("compare", help="run all three strategies over one plan")
    add_run_options(comp, with_strategy=False)
    comp.add_argument("--parallel", action="store_true")
    comp.add_argument("--no-detect", action="store_true",
                      help="skip interference detection on the continue trace")

    det = sub.add_parser("detect", help="detect branch interferences in a trace")
    det.add_argument("--trace", required=True)
    det.add_argument("--out")
    det.add_argument("--shim-cmd", help="replay in an external backend instead of toy")

    rep = sub.add_parser("report", help="re-emit metrics from trace files")
    rep.add_argument("--trace", nargs="+", required=True)
    rep.add_argument("--format", choices=("json", "csv", "svg"), default="json")
    rep.add_argument("--out")

    store = sub.add_parser("store", help="store utilities")
    store_sub = store.add_subparsers(dest="store_action", required=True)
    stats = store_sub.add_parser("stats", help="print storage statistics")
    stats.add_argument("--store")

    shim = sub.add_parser("shim-check", help="run the backend conformance vectors")
    shim.add_argument("shim_cmd", nargs="?", help="backend launch command (default: toy self-check)")

    return parser


COMMANDS = {
    "plan": cmd_plan,
    "run": cmd_run,
    "compare": cmd_compare,
    "detect": cmd_detect,
    "report": cmd_report,
    "store": cmd_store,
    "shim-check": cmd_shim_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config: dict[str, str] = {}
    if args.config:
        config = read_config_file(args.config)
    try:
        return COMMANDS[args.command](args, config)
    except BranchBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
