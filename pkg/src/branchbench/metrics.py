"""Session metrics, strategy comparison, and report rendering.

End-to-end time is the sum of recorded operation durations (execution,
replay, checkpoint, checkout, restart) — never the wall-clock span — so
time spent waiting on a code generator does not count, no matter how slow
the model is. Peak cells and peak variables are maxima of the per-event
notebook length and namespace size.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IncomparableTracesError, TraceSchemaError
from .interference import InterferenceReport
from .store import StoreStats
from .trace import SessionTrace

CSV_COLUMNS = (
    "strategy",
    "e2e_ms",
    "executed_cells",
    "replayed_cells",
    "checkout_count",
    "checkpoint_overhead_ms",
    "restore_overhead_ms",
    "interference_count",
    "peak_vars",
    "peak_cells",
    "checkpoint_storage_bytes",
)

_EVENT_DURATION_FIELD = {
    "execute_cell": "duration_ms",
    "replay_cell": "duration_ms",
    "checkpoint": "checkpoint_ms",
    "checkout": "checkout_ms",
    "restart": "restart_ms",
}


@dataclass
class MetricsReport:
    strategy: str
    e2e_ms: int = 0
    executed_cells: int = 0
    replayed_cells: int = 0
    checkout_count: int = 0
    checkpoint_overhead_ms: int = 0
    restore_overhead_ms: int = 0
    interference_count: int | None = None
    peak_vars: int = 0
    peak_cells: int = 0
    checkpoint_storage_bytes: int | None = None
    branches: int = 0
    seed: int = 0
    plan_digest: str = ""

    def to_json(self) -> dict:
        obj = {column: getattr(self, column) for column in CSV_COLUMNS}
        obj["branches"] = self.branches
        obj["seed"] = self.seed
        obj["plan_digest"] = self.plan_digest
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(**{k: obj.get(k) for k in list(CSV_COLUMNS) + ["branches", "seed", "plan_digest"]})


def compute(
    trace: SessionTrace,
    store_stats: StoreStats | None = None,
    interference: InterferenceReport | None = None,
) -> MetricsReport:
    report = MetricsReport(
        strategy=trace.strategy, seed=trace.seed, plan_digest=trace.plan_digest
    )
    for event in trace.events:
        kind = event["type"]
        duration_field = _EVENT_DURATION_FIELD.get(kind)
        if duration_field is not None:
            if duration_field not in event:
                raise TraceSchemaError(
                    f"{kind} event lacks {duration_field}", event.get("event_seq")
                )
            report.e2e_ms += int(event[duration_field])
        if kind == "execute_cell":
            report.executed_cells += 1
        elif kind == "replay_cell":
            report.replayed_cells += 1
        elif kind == "checkout":
            report.checkout_count += 1
            report.restore_overhead_ms += int(event["checkout_ms"])
        elif kind == "checkpoint":
            report.checkpoint_overhead_ms += int(event["checkpoint_ms"])
        elif kind == "branch_start":
            report.branches += 1
        if kind in ("execute_cell", "replay_cell"):
            report.peak_cells = max(report.peak_cells, int(event["notebook_len_after"]))
            report.peak_vars = max(report.peak_vars, int(event["namespace_size_after"]))
    if interference is not None:
        report.interference_count = interference.total
    if store_stats is not None:
        report.checkpoint_storage_bytes = store_stats.total_object_bytes
    return report


@dataclass
class ComparisonTable:
    rows: list[dict] = field(default_factory=list)
    inversions: list[str] = field(default_factory=list)
    plan_digest: str = ""
    seed: int = 0

    def row(self, strategy: str) -> dict:
        for row in self.rows:
            if row["strategy"] == strategy:
                return row
        raise KeyError(strategy)

    def to_json(self) -> dict:
        return {
            "plan_digest": self.plan_digest,
            "seed": self.seed,
            "rows": self.rows,
            "inversions": self.inversions,
        }

    def table(self) -> str:
        header = f"{'strategy':<12} {'e2e_ms':>10} {'cells':>7} {'vars':>6} {'storage':>12} {'vs restart':>11} {'per-branch ovh':>15}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            storage = row["checkpoint_storage_bytes"]
            saving = row["saving_vs_restart_pct"]
            lines.append(
                f"{row['strategy']:<12} {row['e2e_ms']:>10} {row['peak_cells']:>7} "
                f"{row['peak_vars']:>6} {storage if storage is not None else '-':>12} "
                f"{f'{saving:+.1f}%' if saving is not None else '-':>11} "
                f"{row['per_branch_overhead_ms']:>15.1f}"
            )
        for note in self.inversions:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def compare(reports: dict[str, MetricsReport]) -> ComparisonTable:
    """Side-by-side comparison of >= 2 strategies over the identical plan."""
    if len(reports) < 2:
        raise ValueError("compare needs at least two strategy reports")
    digests = {r.plan_digest for r in reports.values()}
    seeds = {r.seed for r in reports.values()}
    if len(digests) != 1 or len(seeds) != 1:
        raise IncomparableTracesError(
            "traces span different plans or seeds and cannot be compared"
        )
    restart = reports.get("restart")
    table = ComparisonTable(plan_digest=digests.pop(), seed=seeds.pop())
    for strategy in ("restart", "continue", "checkpoint"):
        report = reports.get(strategy)
        if report is None:
            continue
        saving = None
        if restart is not None and restart.e2e_ms > 0 and strategy != "restart":
            saving = 100.0 * (restart.e2e_ms - report.e2e_ms) / restart.e2e_ms
        overhead = report.checkpoint_overhead_ms + report.restore_overhead_ms
        table.rows.append(
            {
                "strategy": strategy,
                "e2e_ms": report.e2e_ms,
                "executed_cells": report.executed_cells,
                "replayed_cells": report.replayed_cells,
                "peak_cells": report.peak_cells,
                "peak_vars": report.peak_vars,
                "checkpoint_storage_bytes": report.checkpoint_storage_bytes,
                "interference_count": report.interference_count,
                "saving_vs_restart_pct": saving,
                "per_branch_overhead_ms": overhead / max(report.branches, 1),
            }
        )
    checkpoint = reports.get("checkpoint")
    if restart is not None and checkpoint is not None and checkpoint.e2e_ms > restart.e2e_ms:
        table.inversions.append(
            "checkpoint e2e exceeds restart: recomputation is cheaper than "
            "restoring this state"
        )
    return table


# --- rendering ---

def emit(obj: MetricsReport | ComparisonTable | list[MetricsReport], fmt: str,
         path: str | Path | None = None) -> bytes:
    if fmt == "json":
        data = _emit_json(obj)
    elif fmt == "csv":
        data = _emit_csv(obj)
    elif fmt == "svg":
        data = _emit_svg(obj)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    if path is not None:
        Path(path).write_bytes(data)
    return data


def _as_report_list(obj) -> list[MetricsReport]:
    if isinstance(obj, MetricsReport):
        return [obj]
    if isinstance(obj, list):
        return obj
    raise TypeError(f"cannot render {type(obj).__name__} in this format")


def _emit_json(obj) -> bytes:
    if isinstance(obj, (MetricsReport, ComparisonTable)):
        payload = obj.to_json()
    else:
        payload = [r.to_json() for r in _as_report_list(obj)]
    return (json.dumps(payload, indent=2) + "\n").encode("utf-8")


def _emit_csv(obj) -> bytes:
    reports = _as_report_list(obj)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerow(
            ["" if (v := getattr(report, c)) is None else v for c in CSV_COLUMNS]
        )
    return buffer.getvalue().encode("utf-8")


def _emit_svg(obj) -> bytes:
    """Self-contained grouped bar chart: one group per session, one bar per
    strategy, bar height proportional to e2e time."""
    if isinstance(obj, ComparisonTable):
        groups = [("session", {row["strategy"]: row["e2e_ms"] for row in obj.rows})]
    elif isinstance(obj, list) and obj and isinstance(obj[0], tuple):
        groups = obj  # [(label, {strategy: value}), ...]
    else:
        reports = _as_report_list(obj)
        groups = [("session", {r.strategy: r.e2e_ms for r in reports})]

    colors = {"restart": "#c44e52", "continue": "#dd8452", "checkpoint": "#4c72b0"}
    bar_w, gap, group_gap, height, margin = 34, 6, 30, 220, 40
    max_value = max((v for _, values in groups for v in values.values()), default=1) or 1
    group_w = lambda n: n * bar_w + (n - 1) * gap  # noqa: E731
    total_w = margin * 2 + sum(group_w(len(v)) for _, v in groups) + group_gap * (len(groups) - 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" '
        f'height="{height + 2 * margin}" font-family="sans-serif" font-size="11">'
    ]
    x = margin
    for label, values in groups:
        for strategy in sorted(values):
            value = values[strategy]
            bar_h = max(1, int(height * value / max_value))
            y = margin + height - bar_h
            color = colors.get(strategy, "#999999")
            parts.append(
                f'<rect class="bar" data-strategy="{strategy}" x="{x}" y="{y}" '
                f'width="{bar_w}" height="{bar_h}" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x + bar_w / 2}" y="{y - 4}" text-anchor="middle">{value}</text>'
            )
            x += bar_w + gap
        group_x = x - gap - group_w(len(values)) / 2 - bar_w / 2 + bar_w / 2
        parts.append(
            f'<text x="{group_x}" y="{margin + height + 16}" text-anchor="middle">{label}</text>'
        )
        x += group_gap - gap
    legend_x = margin
    for i, (strategy, color) in enumerate(colors.items()):
        parts.append(
            f'<rect x="{legend_x}" y="{8}" width="10" height="10" fill="{color}"/>'
            f'<text x="{legend_x + 14}" y="{17}">{strategy}</text>'
        )
        legend_x += 110
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")
