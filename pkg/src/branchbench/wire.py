"""Wire protocol for external backends: one JSON object per line over stdio.

Request:  {"id": <int>, "op": <name>, "payload": {...}}
Response: {"id": <int>, "status": "ok"|"error", "payload": {...}}

Ops: hello, execute, snapshot, restore, reset, list_vars, shutdown.
Binary values travel base64-encoded inside the line framing. Cell-level
failures are "ok" responses whose outcome carries status=error; an
"error" response means the request itself could not be served.
"""

from __future__ import annotations

import base64
import json
import sys
from typing import Any, TextIO

PROTOCOL_VERSION = 1


def manifest_to_wire(manifest) -> list[dict]:
    return [
        {
            "name": e.name,
            "type_tag": e.type_tag,
            "byte_size": e.byte_size,
            "value_digest": e.value_digest,
            "restorable": e.restorable,
        }
        for e in manifest
    ]


def manifest_from_wire(entries: list[dict]):
    from .store import ManifestEntry, VariableManifest

    return VariableManifest(
        [
            ManifestEntry(
                name=e["name"],
                type_tag=e["type_tag"],
                byte_size=int(e["byte_size"]),
                value_digest=e["value_digest"],
                restorable=bool(e["restorable"]),
            )
            for e in entries
        ]
    )


def outcome_to_wire(outcome) -> dict:
    return {
        "status": outcome.status,
        "stdout": outcome.stdout,
        "stderr": outcome.stderr,
        "error_name": outcome.error_name,
        "error_message": outcome.error_message,
        "duration_ms": outcome.duration_ms,
        "reads": sorted(outcome.reads),
        "writes": sorted(outcome.writes),
        "creates": sorted(outcome.creates),
        "deletes": sorted(outcome.deletes),
        "manifest": manifest_to_wire(outcome.manifest),
    }


def outcome_from_wire(payload: dict):
    from .backend import ExecOutcome

    return ExecOutcome(
        status=payload["status"],
        stdout=payload.get("stdout", ""),
        stderr=payload.get("stderr", ""),
        error_name=payload.get("error_name"),
        error_message=payload.get("error_message"),
        duration_ms=int(payload.get("duration_ms", 0)),
        reads=set(payload.get("reads", [])),
        writes=set(payload.get("writes", [])),
        creates=set(payload.get("creates", [])),
        deletes=set(payload.get("deletes", [])),
        manifest=manifest_from_wire(payload.get("manifest", [])),
    )


def snapshot_to_wire(payload) -> dict:
    entries = []
    for e in payload.manifest:
        data = payload.entries.get(e.name)
        entries.append(
            {
                "name": e.name,
                "restorable": e.restorable,
                "bytes_b64": base64.b64encode(data).decode("ascii") if data is not None else None,
                "type_tag": e.type_tag,
                "byte_size": e.byte_size,
                "value_digest": e.value_digest,
            }
        )
    return {"entries": entries}


def snapshot_from_wire(payload: dict):
    from .backend import SnapshotPayload
    from .store import ManifestEntry, VariableManifest

    entries: dict[str, bytes] = {}
    manifest_entries = []
    for e in payload.get("entries", []):
        manifest_entries.append(
            ManifestEntry(
                name=e["name"],
                type_tag=e["type_tag"],
                byte_size=int(e["byte_size"]),
                value_digest=e["value_digest"],
                restorable=bool(e["restorable"]),
            )
        )
        if e.get("bytes_b64") is not None:
            entries[e["name"]] = base64.b64decode(e["bytes_b64"])
    return SnapshotPayload(entries=entries, manifest=VariableManifest(manifest_entries))


def serve(backend, stdin: TextIO | None = None, stdout: TextIO | None = None,
          protocol_version: int = PROTOCOL_VERSION, dialect: str = "toy",
          backend_name: str = "branchbench-toy") -> None:
    """Answer wire requests against a backend handle until shutdown or EOF.

    The advertised protocol_version is configurable so handshake-failure
    paths can be exercised.
    """
    from .backend import CellSource

    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def respond(request_id: Any, status: str, payload: dict) -> None:
        stdout.write(json.dumps({"id": request_id, "status": status, "payload": payload}) + "\n")
        stdout.flush()

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            respond(None, "error", {"error": "ProtocolError", "message": "unparseable request"})
            continue
        request_id = request.get("id")
        op = request.get("op")
        payload = request.get("payload", {}) or {}
        try:
            if op == "hello":
                respond(request_id, "ok", {
                    "protocol": protocol_version,
                    "dialect": dialect,
                    "backend": backend_name,
                })
            elif op == "execute":
                outcome = backend.execute(
                    CellSource(payload["source"], payload.get("step_label"))
                )
                respond(request_id, "ok", outcome_to_wire(outcome))
            elif op == "snapshot":
                respond(request_id, "ok", snapshot_to_wire(backend.snapshot()))
            elif op == "restore":
                backend.restore(snapshot_from_wire(payload))
                respond(request_id, "ok", {})
            elif op == "reset":
                backend.reset()
                respond(request_id, "ok", {})
            elif op == "list_vars":
                respond(request_id, "ok", {"names": backend.list_vars()})
            elif op == "shutdown":
                respond(request_id, "ok", {})
                return
            else:
                respond(request_id, "error",
                        {"error": "UnknownOp", "message": f"unknown op {op!r}"})
        except Exception as exc:  # noqa: BLE001 - every fault becomes a wire error
            respond(request_id, "error",
                    {"error": type(exc).__name__, "message": str(exc)})
