"""Session runner: executes an exploration plan under one of three strategies.

restart    — every new branch resets the kernel and re-executes the cells
             leading to its branch point before running new ones.
continue   — never resets; new cells are appended to the one live notebook
             and run against whatever state the kernel has accumulated.
checkpoint — commits code+data after every cell; a new branch checks out
             its branch-point commit (restoring the exact variable state)
             and runs new cells from there.

All three produce the same trace schema and a logical commit DAG: every
executed cell yields a commit id, computed from its parent, source,
status, and post-cell manifest, whether or not a store persists it. For
continue, the "branch point" is bookkeeping only (no state is touched),
but recording it is what lets the interference detector reconstruct what
each branch should have seen.
"""

from __future__ import annotations

import random
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

from .agent import (
    AgentMessage,
    CellGenerator,
    History,
    build_debug_prompt,
    build_next_prompt,
    build_plan_prompt,
    truncate_history,
)
from .backend import Backend, BackendConfig, CellSource, SnapshotPayload, start_backend
from .errors import (
    BackendCrash,
    PlanValidationError,
    RestoreRefusedError,
)
from .plan import BranchSpec, ExplorationPlan
from .store import (
    ExecRecord,
    ManifestEntry,
    Store,
    VariableManifest,
    commit_digest,
)
from .trace import SessionTrace

STRATEGIES = ("restart", "continue", "checkpoint")

MAX_DEBUG_ATTEMPTS = 2


@dataclass(frozen=True)
class LogicalNode:
    """One node of the session's history DAG (index 0 is the empty root)."""

    id: str
    parent: str | None
    cell: CellSource | None
    index: int


@dataclass
class SessionResult:
    trace: SessionTrace
    final_manifests: dict[int, VariableManifest | None]
    crashed: bool = False
    # id -> node for every logical commit the session created
    nodes: dict[str, LogicalNode] = field(default_factory=dict)


def select_branch_point(
    rng: random.Random, commits: Sequence[str], bias: str = "uniform"
) -> str:
    """Pick the commit a new branch revisits; same seed, same sequence."""
    if not commits:
        raise ValueError("cannot select a branch point with no commits")
    if bias == "recent":
        return rng.choices(list(commits), weights=range(1, len(commits) + 1))[0]
    return commits[rng.randrange(len(commits))]


def handle_failed_branch(
    rng: random.Random, commits: Sequence[str], bias: str = "uniform"
) -> str:
    """A cell failed and both fix attempts failed: the branch is abandoned
    and the next one starts from a randomly chosen commit."""
    return select_branch_point(rng, commits, bias)


def render_output(outcome) -> str:
    if outcome.status == "error":
        return f"{outcome.error_name}: {outcome.error_message}"
    return outcome.stdout.strip()


class _SessionCrash(Exception):
    pass


class _Session:
    def __init__(
        self,
        plan: ExplorationPlan,
        strategy: str,
        backend: Backend,
        store: Store | None,
        agent: CellGenerator | None,
        branch_point_bias: str,
    ):
        self.plan = plan
        self.strategy = strategy
        self.backend = backend
        self.store = store
        self.agent = agent
        self.bias = branch_point_bias
        self.rng = random.Random(plan.seed)
        self.trace = SessionTrace(strategy, plan.seed, plan.digest())

        root_id = commit_digest(None, "", "ok", VariableManifest())
        self.nodes: list[LogicalNode] = [LogicalNode(root_id, None, None, 0)]
        self.by_id: dict[str, LogicalNode] = {root_id: self.nodes[0]}
        if store is not None and strategy == "checkpoint":
            commit = store.create_commit(None, "", ExecRecord("ok"), VariableManifest())
            store.set_head(commit.id)

        # full_history keeps every message pair ever exchanged; history is
        # the checked-out view of it for the current branch point.
        self.full_history: History = []
        self.history: History = []
        self.notebook: list[CellSource] = []
        self.current_digests: dict[str, str] = {}
        self.current_manifest = VariableManifest()
        self.parent_id = root_id
        self.final_manifests: dict[int, VariableManifest | None] = {}

    # --- DAG helpers ---

    @property
    def root_id(self) -> str:
        return self.nodes[0].id

    def path_to(self, commit_id: str) -> list[LogicalNode]:
        path = []
        cur: str | None = commit_id
        while cur is not None:
            node = self.by_id[cur]
            path.append(node)
            cur = node.parent
        path.reverse()
        return path

    def _record_node(self, node_id: str, parent: str | None, cell: CellSource) -> None:
        if node_id not in self.by_id:
            node = LogicalNode(node_id, parent, cell, len(self.nodes))
            self.nodes.append(node)
            self.by_id[node_id] = node

    # --- execution ---

    def _crash(self, reason: str) -> None:
        self.trace.append("session_crashed", reason=reason)
        raise _SessionCrash(reason)

    def _execute(self, cell: CellSource):
        try:
            return self.backend.execute(cell)
        except BackendCrash as exc:
            self._crash(str(exc))

    def run_one(self, branch_idx: int, cell_idx: int, cell: CellSource, attempt: int):
        pre_digests = self.current_digests
        outcome = self._execute(cell)
        node_id = commit_digest(self.parent_id, cell.source, outcome.status, outcome.manifest)
        self.notebook.append(cell)
        checkpoint_info = None
        if self.strategy == "checkpoint":
            checkpoint_info = self._commit(cell, outcome, node_id)
        self.trace.append(
            "execute_cell",
            branch_idx=branch_idx,
            cell_idx=cell_idx,
            step_label=cell.step_label,
            cell_source=cell.source,
            status=outcome.status,
            error_name=outcome.error_name,
            error_message=outcome.error_message,
            duration_ms=outcome.duration_ms,
            reads=sorted(outcome.reads),
            writes=sorted(outcome.writes),
            creates=sorted(outcome.creates),
            deletes=sorted(outcome.deletes),
            read_digests={n: pre_digests.get(n) for n in sorted(outcome.reads)},
            write_digests={
                n: outcome.manifest.get(n).value_digest for n in sorted(outcome.writes)
            },
            commit_id=node_id,
            parent_commit_id=self.parent_id,
            debug_attempt=attempt,
            notebook_len_after=len(self.notebook),
            namespace_size_after=len(outcome.manifest),
        )
        if checkpoint_info is not None:
            checkpoint_ms, bytes_written = checkpoint_info
            self.trace.append(
                "checkpoint",
                branch_idx=branch_idx,
                commit_id=node_id,
                checkpoint_ms=checkpoint_ms,
                bytes_written=bytes_written,
            )
        self._record_node(node_id, self.parent_id, cell)
        self.parent_id = node_id
        self.current_digests = outcome.manifest.digests()
        self.current_manifest = outcome.manifest
        return outcome, node_id

    def _commit(self, cell: CellSource, outcome, expected_id: str):
        assert self.store is not None
        start = time.perf_counter()
        bytes_before = self.store.storage_stats().total_object_bytes
        try:
            payload = self.backend.snapshot()
        except BackendCrash as exc:
            self._crash(str(exc))
        entries = []
        for entry in payload.manifest:
            blob = None
            if entry.restorable:
                blob = self.store.put_blob_memo(entry.value_digest, payload.entries[entry.name])
            entries.append(
                ManifestEntry(
                    entry.name,
                    entry.type_tag,
                    entry.byte_size,
                    entry.value_digest,
                    blob,
                    entry.restorable,
                )
            )
        commit = self.store.create_commit(
            self.parent_id,
            cell.source,
            ExecRecord(outcome.status, outcome.error_name, outcome.duration_ms),
            VariableManifest(entries),
        )
        assert commit.id == expected_id, "store and logical commit ids diverged"
        self.store.set_head(commit.id)
        bytes_written = self.store.storage_stats().total_object_bytes - bytes_before
        checkpoint_ms = int((time.perf_counter() - start) * 1000)
        return checkpoint_ms, bytes_written

    # --- branch preparation ---

    def _replay_path(self, branch_idx: int, path_cells: list[CellSource]) -> None:
        restart_ms = self.backend.reset()
        self.trace.append("restart", branch_idx=branch_idx, restart_ms=restart_ms)
        self.notebook = []
        self.current_digests = {}
        self.current_manifest = VariableManifest()
        for pos, cell in enumerate(path_cells):
            outcome = self._execute(cell)
            self.notebook.append(cell)
            self.trace.append(
                "replay_cell",
                branch_idx=branch_idx,
                path_pos=pos,
                cell_source=cell.source,
                step_label=cell.step_label,
                status=outcome.status,
                error_name=outcome.error_name,
                duration_ms=outcome.duration_ms,
                notebook_len_after=len(self.notebook),
                namespace_size_after=len(outcome.manifest),
            )
            self.current_digests = outcome.manifest.digests()
            self.current_manifest = outcome.manifest

    def _checkout(self, branch_idx: int, node: LogicalNode, path_cells: list[CellSource]) -> None:
        assert self.store is not None
        commit = self.store.get_commit(node.id)
        start = time.perf_counter()
        entries = {}
        for entry in commit.manifest:
            if entry.restorable and entry.blob is not None:
                entries[entry.name] = self.store.get_blob(entry.blob)
        payload = SnapshotPayload(entries=entries, manifest=commit.manifest)
        try:
            self.backend.restore(payload)
        except RestoreRefusedError as exc:
            # Cannot restore this state; fall back to restart-style replay.
            self.trace.append(
                "fallback",
                branch_idx=branch_idx,
                reason="restore_refused",
                variables=exc.variables,
            )
            self._replay_path(branch_idx, path_cells)
            return
        except BackendCrash as exc:
            self._crash(str(exc))
        checkout_ms = int((time.perf_counter() - start) * 1000)
        self.trace.append(
            "checkout", branch_idx=branch_idx, commit_id=node.id, checkout_ms=checkout_ms
        )
        self.store.set_head(node.id)
        self.notebook = list(path_cells)
        stripped = VariableManifest(
            [
                ManifestEntry(e.name, e.type_tag, e.byte_size, e.value_digest, None, e.restorable)
                for e in commit.manifest
            ]
        )
        self.current_digests = stripped.digests()
        self.current_manifest = stripped

    def _append_exchange(self, prompt: str, cell_source: str, anchor: str) -> None:
        pair = [
            AgentMessage("user", prompt, anchor),
            AgentMessage("assistant", cell_source, anchor),
        ]
        self.full_history = self.full_history + pair
        self.history = self.history + pair

    def resolve_branch_point(self, spec: BranchSpec, after_failure: bool) -> LogicalNode:
        commits = [n.id for n in self.nodes]
        if after_failure:
            return self.by_id[handle_failed_branch(self.rng, commits, self.bias)]
        bp = spec.branch_point
        if bp == "root":
            return self.nodes[0]
        if bp == "rng":
            return self.by_id[select_branch_point(self.rng, commits, self.bias)]
        if not isinstance(bp, int) or not 0 <= bp < len(self.nodes):
            raise PlanValidationError(
                f"branch_point {bp!r} does not name an existing commit "
                f"({len(self.nodes)} exist)"
            )
        return self.nodes[bp]

    # --- branch execution ---

    def run_branch(self, branch_idx: int, spec: BranchSpec, after_failure: bool) -> bool:
        """Run one branch; returns True if it failed (agent gave up)."""
        node = self.resolve_branch_point(spec, after_failure)
        self.trace.append(
            "branch_start",
            branch_idx=branch_idx,
            branch_point_commit=node.id,
            branch_point_index=node.index,
            after_failure=after_failure,
        )
        path = self.path_to(node.id)
        path_cells = [n.cell for n in path if n.cell is not None]

        first_fresh = branch_idx == 0 and node.index == 0
        if self.strategy == "restart":
            if first_fresh:
                self.notebook = []
            else:
                self._replay_path(branch_idx, path_cells)
        elif self.strategy == "checkpoint":
            if first_fresh:
                self.notebook = []
            else:
                self._checkout(branch_idx, node, path_cells)
        # continue: no state operation, the notebook keeps growing

        self.parent_id = node.id
        if self.agent is not None:
            ancestry_ids = [n.id for n in path]
            self.history = truncate_history(self.full_history, node.id, ancestry_ids)

        failed = False
        cell_idx = 0
        if spec.cells is not None:
            for cell in spec.cells:
                self.run_one(branch_idx, cell_idx, cell, attempt=0)
                cell_idx += 1
        else:
            assert self.agent is not None
            last_output = ""
            for step_no in range(1, (spec.agent_steps or 0) + 1):
                prompt = build_next_prompt(last_output, step_no)
                cell = self.agent.next_cell(self.history, step_no, last_output)
                outcome, node_id = self.run_one(branch_idx, cell_idx, cell, attempt=0)
                cell_idx += 1
                self._append_exchange(prompt, cell.source, node_id)
                if outcome.status == "error" and self.agent.supports_debug:
                    for attempt in range(1, MAX_DEBUG_ATTEMPTS + 1):
                        failed_output = render_output(outcome)
                        dbg_prompt = build_debug_prompt(failed_output)
                        cell = self.agent.debug_cell(self.history, failed_output, attempt)
                        outcome, node_id = self.run_one(branch_idx, cell_idx, cell, attempt)
                        cell_idx += 1
                        self._append_exchange(dbg_prompt, cell.source, node_id)
                        if outcome.status == "ok":
                            break
                    if outcome.status != "ok":
                        failed = True
                        break
                last_output = render_output(outcome)

        if self.store is not None and self.strategy == "checkpoint":
            self.store.set_ref(f"branch-{branch_idx}", self.parent_id)
        if failed:
            self.final_manifests[branch_idx] = None
            self.trace.append(
                "branch_end", branch_idx=branch_idx, failed=True, final_manifest=None
            )
        else:
            self.final_manifests[branch_idx] = self.current_manifest
            self.trace.append(
                "branch_end",
                branch_idx=branch_idx,
                failed=False,
                final_manifest=[
                    [e.name, e.type_tag, e.byte_size, e.value_digest]
                    for e in self.current_manifest
                ],
            )
        return failed

    def run(self) -> SessionResult:
        if any(b.agent_driven for b in self.plan.branches):
            assert self.agent is not None
            step_plan = self.agent.plan(self.plan.task)
            self.full_history = [
                AgentMessage("user", build_plan_prompt(self.plan.task)),
                AgentMessage("assistant", step_plan.raw_text),
            ]
            self.history = list(self.full_history)
        crashed = False
        after_failure = False
        try:
            for branch_idx, spec in enumerate(self.plan.branches):
                after_failure = self.run_branch(branch_idx, spec, after_failure)
        except _SessionCrash:
            crashed = True
        return SessionResult(
            trace=self.trace,
            final_manifests=self.final_manifests,
            crashed=crashed,
            nodes=dict(self.by_id),
        )


def run_session(
    plan: ExplorationPlan,
    strategy: str,
    backend_config: BackendConfig | None = None,
    store: Store | None = None,
    agent: CellGenerator | None = None,
    branch_point_bias: str = "uniform",
    backend: Backend | None = None,
) -> SessionResult:
    """Run a whole plan under one strategy, producing the trace and the
    per-branch final manifests.

    A crash mid-session is not an exception: the partial trace comes back
    with crashed=True. Checkpoint requires a store; plans with agent-driven
    branches require an agent.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; pick one of {STRATEGIES}")
    plan.validate()
    if strategy == "checkpoint" and store is None:
        raise ValueError("the checkpoint strategy requires a store")
    if any(b.agent_driven for b in plan.branches) and agent is None:
        raise ValueError("this plan has agent-driven branches and needs an agent")
    if store is not None and store.algorithm != "sha256":
        raise ValueError("session stores must use sha256 (the backend digest algorithm)")
    own_backend = backend is None
    if backend is None:
        backend = start_backend(backend_config or BackendConfig())
    session = _Session(plan, strategy, backend, store, agent, branch_point_bias)
    try:
        return session.run()
    finally:
        if own_backend:
            backend.close()
