"""Shared test utilities: oracles and scripted agent doubles."""

from __future__ import annotations

from branchbench.agent import CellGenerator, StepPlan, parse_step_plan
from branchbench.backend import CellSource, ToyBackend
from branchbench.trace import SessionTrace

PLAN_TEXT = "There are 2 steps in total.\n1. First\n2. Second"


class ScriptedAgent(CellGenerator):
    """Returns canned cells for next/debug calls, in order."""

    kind = "scripted"

    def __init__(self, next_cells: list[str], debug_cells: list[str] | None = None):
        self.next_cells = list(next_cells)
        self.debug_cells = list(debug_cells or [])
        self.next_calls = 0
        self.debug_calls = 0

    def plan(self, task: str) -> StepPlan:
        return parse_step_plan(PLAN_TEXT)

    def next_cell(self, history, step_no, last_output) -> CellSource:
        cell = self.next_cells[self.next_calls % len(self.next_cells)]
        self.next_calls += 1
        return CellSource(cell)

    def debug_cell(self, history, failed_output, attempt) -> CellSource:
        from branchbench.agent import _check_attempt

        _check_attempt(attempt)
        if not self.debug_cells:
            cell = "fail still broken"
        else:
            cell = self.debug_cells[self.debug_calls % len(self.debug_cells)]
        self.debug_calls += 1
        return CellSource(cell)


class AlwaysFailingAgent(ScriptedAgent):
    def __init__(self):
        super().__init__(next_cells=["fail first try"], debug_cells=["fail still broken"])


def oracle_interferences(trace: SessionTrace) -> tuple[set, set]:
    """Full-resimulation oracle, independent of the incremental detector.

    For every executed cell it replays the cell's whole expected history
    from scratch in a fresh backend and diffs each read. Returns
    (interfering (branch, cell, variable) triples, indeterminate
    (branch, cell) pairs).
    """
    events_by_commit: dict[str, dict] = {}
    branch_points: dict[int, str] = {}
    branches: dict[int, list[dict]] = {}
    for event in trace.events:
        if event["type"] == "branch_start":
            branch_points.setdefault(event["branch_idx"], event["branch_point_commit"])
        elif event["type"] == "execute_cell":
            events_by_commit.setdefault(event["commit_id"], event)
            branches.setdefault(event["branch_idx"], []).append(event)

    def path_of(commit_id: str) -> list[dict]:
        path = []
        cur = commit_id
        while cur in events_by_commit:
            path.append(events_by_commit[cur])
            cur = events_by_commit[cur]["parent_commit_id"]
        return list(reversed(path))

    flagged = set()
    indeterminate = set()
    for branch_idx, cells in branches.items():
        prefix_events = path_of(branch_points[branch_idx])
        for k, event in enumerate(cells):
            backend = ToyBackend()
            ok = True
            digests: dict[str, str] = {}
            for before in prefix_events + cells[:k]:
                out = backend.execute(CellSource(before["cell_source"]))
                if out.status == "error" and before["status"] == "ok":
                    ok = False
                    break
                digests = out.manifest.digests()
            if not ok:
                indeterminate.add((branch_idx, event["cell_idx"]))
                continue
            for variable in event["reads"]:
                if digests.get(variable) != event["read_digests"].get(variable):
                    flagged.add((branch_idx, event["cell_idx"], variable))
    return flagged, indeterminate
