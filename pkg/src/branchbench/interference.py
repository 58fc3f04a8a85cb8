"""Branch-interference detection over session traces.

A branch interference is a cell reading a variable whose live value was
produced off its own path: the value differs from what a clean replay of
the branch's history would have produced (or the variable should not
exist at all, or should exist but does not). Detection replays each
branch's expected history in a disposable backend and compares, for every
read, the expected digest against the digest the cell observed live.

explicit: the reading cell errored and the error names the variable.
implicit: the read silently saw a wrong value (the dangerous case).
"""

from __future__ import annotations

import re
from collections.abc import Callable
from dataclasses import dataclass, field

from .backend import Backend, CellSource, ToyBackend
from .errors import TraceSchemaError
from .trace import SessionTrace

BackendFactory = Callable[[], Backend]


@dataclass(frozen=True)
class Interference:
    reader: tuple[int, int]  # (branch_idx, cell_idx)
    variable: str
    branch_point: str
    expected_digest: str | None  # absent: the variable should not exist
    observed_digest: str | None  # absent: the variable was missing live
    writer: tuple[int, int] | None
    kind: str  # "implicit" | "explicit"

    def to_json(self) -> dict:
        return {
            "reader": list(self.reader),
            "variable": self.variable,
            "branch_point": self.branch_point,
            "expected_digest": self.expected_digest,
            "observed_digest": self.observed_digest,
            "writer": list(self.writer) if self.writer else None,
            "kind": self.kind,
        }


@dataclass
class InterferenceReport:
    strategy: str
    interferences: list[Interference] = field(default_factory=list)
    indeterminate: list[dict] = field(default_factory=list)

    @property
    def implicit_count(self) -> int:
        return sum(1 for i in self.interferences if i.kind == "implicit")

    @property
    def explicit_count(self) -> int:
        return sum(1 for i in self.interferences if i.kind == "explicit")

    @property
    def total(self) -> int:
        return len(self.interferences)

    def per_branch(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for i in self.interferences:
            counts[i.reader[0]] = counts.get(i.reader[0], 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "total": self.total,
            "implicit": self.implicit_count,
            "explicit": self.explicit_count,
            "per_branch": {str(k): v for k, v in sorted(self.per_branch().items())},
            "indeterminate": self.indeterminate,
            "interferences": [i.to_json() for i in self.interferences],
        }

    def table(self) -> str:
        lines = [
            f"strategy: {self.strategy}",
            f"interferences: {self.total} ({self.implicit_count} implicit, "
            f"{self.explicit_count} explicit), indeterminate: {len(self.indeterminate)}",
        ]
        if self.interferences:
            lines.append(f"{'reader':>10}  {'variable':<12} {'kind':<9} {'writer':>10}")
            for i in self.interferences:
                writer = f"{i.writer[0]}:{i.writer[1]}" if i.writer else "unknown"
                lines.append(
                    f"{i.reader[0]:>5}:{i.reader[1]:<4} {i.variable:<12} {i.kind:<9} {writer:>10}"
                )
        return "\n".join(lines)


def classify_kind(status: str, error_message: str | None, variable: str) -> str:
    """explicit iff the cell errored and the message references the variable."""
    if status == "error" and error_message:
        if re.search(rf"(?<![A-Za-z0-9_]){re.escape(variable)}(?![A-Za-z0-9_])", error_message):
            return "explicit"
    return "implicit"


def _required(event: dict, *fields: str) -> None:
    for f in fields:
        if f not in event:
            raise TraceSchemaError(
                f"execute_cell event lacks {f!r}; re-record the trace with a current "
                "version",
                event.get("event_seq"),
            )


def detect(trace: SessionTrace, backend_factory: BackendFactory | None = None) -> InterferenceReport:
    """Compare every read against a clean per-branch replay.

    Works on any strategy's trace; restart and checkpoint traces yield
    zero findings by construction since those strategies restore exact
    branch-point state. Replays that diverge from the recorded statuses
    make the affected cells indeterminate rather than counted.
    """
    factory = backend_factory or (lambda: ToyBackend())
    report = InterferenceReport(strategy=trace.strategy)

    events_by_commit: dict[str, dict] = {}
    branches: dict[int, list[dict]] = {}
    branch_points: dict[int, str] = {}
    for event in trace.events:
        if event["type"] == "branch_start":
            branch_points.setdefault(event["branch_idx"], event["branch_point_commit"])
        elif event["type"] == "execute_cell":
            _required(event, "reads", "writes", "read_digests", "commit_id", "parent_commit_id")
            events_by_commit.setdefault(event["commit_id"], event)
            branches.setdefault(event["branch_idx"], []).append(event)

    def ancestry_events(commit_id: str) -> list[dict]:
        path = []
        cur = commit_id
        while cur in events_by_commit:
            event = events_by_commit[cur]
            path.append(event)
            cur = event["parent_commit_id"]
        path.reverse()
        return path

    def find_writer(reader_event: dict, variable: str, on_path_seqs: set[int]) -> tuple[int, int] | None:
        writer = None
        for event in trace.events:
            if event["event_seq"] >= reader_event["event_seq"]:
                break
            if event["type"] != "execute_cell" or event["event_seq"] in on_path_seqs:
                continue
            if variable in event["writes"] or variable in event.get("deletes", []):
                writer = (event["branch_idx"], event["cell_idx"])
        return writer

    for branch_idx in sorted(branches):
        cells = branches[branch_idx]
        point = branch_points.get(branch_idx)
        if point is None:
            raise TraceSchemaError(f"branch {branch_idx} has no branch_start event")
        prefix = ancestry_events(point)
        backend = factory()
        try:
            diverged = False
            expected_digests: dict[str, str] = {}
            on_path_seqs = {e["event_seq"] for e in prefix}
            replay_queue = prefix + cells
            checked = 0
            for event in replay_queue:
                is_own_cell = checked >= len(prefix)
                if diverged:
                    if is_own_cell:
                        report.indeterminate.append(
                            {
                                "reader": [event["branch_idx"], event["cell_idx"]],
                                "reason": "replay diverged earlier on this branch path",
                            }
                        )
                    checked += 1
                    continue
                if is_own_cell:
                    for variable in event["reads"]:
                        expected = expected_digests.get(variable)
                        observed = event["read_digests"].get(variable)
                        if expected == observed:
                            continue
                        kind = classify_kind(
                            event["status"], event.get("error_message"), variable
                        )
                        report.interferences.append(
                            Interference(
                                reader=(event["branch_idx"], event["cell_idx"]),
                                variable=variable,
                                branch_point=point,
                                expected_digest=expected,
                                observed_digest=observed,
                                writer=find_writer(event, variable, on_path_seqs),
                                kind=kind,
                            )
                        )
                    on_path_seqs.add(event["event_seq"])
                outcome = backend.execute(
                    CellSource(event["cell_source"], event.get("step_label"))
                )
                # Only a replay that errors where the live run succeeded makes
                # the rest of the branch indeterminate; a live error with a
                # clean replay is itself interference evidence, and the clean
                # state stays the valid expectation.
                if outcome.status == "error" and event["status"] == "ok":
                    diverged = True
                expected_digests = outcome.manifest.digests()
                checked += 1
        finally:
            backend.close()

    report.interferences.sort(key=lambda i: (i.reader, i.variable))
    return report


def classify(interference: Interference) -> str:
    return interference.kind
