"""Session traces: an append-only event log with a JSON-lines file form.

The first line is a header:

    {"format": "branchbench-trace", "version": 1, "strategy": ..., "seed": ...,
     "plan_digest": ...}

Every following line is one event object with a strictly increasing
"event_seq" and a "type" of: branch_start, restart, checkout, replay_cell,
execute_cell, checkpoint, fallback, branch_end, or session_crashed. Every
event also carries "t_wall_ms" (wall-clock since session start); metrics
ignore it by contract, so gaps between events (agent latency) never count.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .errors import TraceSchemaError

TRACE_FORMAT = "branchbench-trace"
TRACE_VERSION = 1

EVENT_TYPES = (
    "branch_start",
    "restart",
    "checkout",
    "replay_cell",
    "execute_cell",
    "checkpoint",
    "fallback",
    "branch_end",
    "session_crashed",
)

# Fields holding measured durations; determinism checks and replay
# comparisons ignore exactly these.
DURATION_FIELDS = ("duration_ms", "checkpoint_ms", "checkout_ms", "restart_ms", "t_wall_ms")


class SessionTrace:
    def __init__(self, strategy: str, seed: int, plan_digest: str):
        self.strategy = strategy
        self.seed = seed
        self.plan_digest = plan_digest
        self.events: list[dict] = []
        self._start = time.perf_counter()

    def append(self, event_type: str, **fields) -> dict:
        if event_type not in EVENT_TYPES:
            raise TraceSchemaError(f"unknown event type {event_type!r}")
        event = {
            "event_seq": len(self.events),
            "type": event_type,
            "t_wall_ms": int((time.perf_counter() - self._start) * 1000),
        }
        event.update(fields)
        self.events.append(event)
        return event

    def iter_type(self, event_type: str):
        return (e for e in self.events if e["type"] == event_type)

    @property
    def crashed(self) -> bool:
        return any(e["type"] == "session_crashed" for e in self.events)

    def header(self) -> dict:
        return {
            "format": TRACE_FORMAT,
            "version": TRACE_VERSION,
            "strategy": self.strategy,
            "seed": self.seed,
            "plan_digest": self.plan_digest,
        }

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.events]
        Path(path).write_text("\n".join(lines) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SessionTrace":
        raw = Path(path).read_text("utf-8").splitlines()
        if not raw:
            raise TraceSchemaError("empty trace file")
        try:
            header = json.loads(raw[0])
        except json.JSONDecodeError as exc:
            raise TraceSchemaError(f"unparseable trace header: {exc}") from exc
        if header.get("format") != TRACE_FORMAT:
            raise TraceSchemaError(f"not a {TRACE_FORMAT} file")
        if header.get("version") != TRACE_VERSION:
            raise TraceSchemaError(f"unsupported trace version {header.get('version')}")
        trace = cls(header["strategy"], header["seed"], header.get("plan_digest", ""))
        last_seq = -1
        for line in raw[1:]:
            if not line.strip():
                continue
            event = json.loads(line)
            seq = event.get("event_seq")
            if not isinstance(seq, int) or seq <= last_seq:
                raise TraceSchemaError("event_seq is not strictly increasing", seq)
            if event.get("type") not in EVENT_TYPES:
                raise TraceSchemaError(f"unknown event type {event.get('type')!r}", seq)
            last_seq = seq
            trace.events.append(event)
        return trace

    def normalized_events(self) -> list[dict]:
        """Events with duration fields cleared, for determinism comparisons."""
        out = []
        for event in self.events:
            copy = dict(event)
            for field in DURATION_FIELDS:
                copy.pop(field, None)
            out.append(copy)
        return out
