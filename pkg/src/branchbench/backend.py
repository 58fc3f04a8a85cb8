"""Execution backends: a persistent namespace that runs cells.

Two implementations share one handle interface: an in-process
deterministic toy interpreter, and a client for external backends spoken
to over the line-delimited wire protocol (see wire.py). Every execute
reports the per-cell read/write sets and the full post-cell variable
manifest; snapshot/restore move the whole namespace as serialized bytes.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass

from . import toylang, wire
from .errors import (
    BackendCrash,
    BackendLaunchError,
    CellTimeout,
    ProtocolError,
    RestoreRefusedError,
    VersionMismatchError,
)
from .store import ManifestEntry, VariableManifest


@dataclass(frozen=True)
class CellSource:
    source: str
    step_label: str | None = None

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("cell source must be non-empty")


@dataclass
class ExecOutcome:
    status: str  # "ok" | "error"
    stdout: str
    stderr: str
    error_name: str | None
    error_message: str | None
    duration_ms: int
    reads: set[str]
    writes: set[str]
    creates: set[str]
    deletes: set[str]
    manifest: VariableManifest

    def check_algebra(self, prior_names: set[str]) -> None:
        """Assert the manifest algebra: post = prior ∪ creates − deletes."""
        expected = (prior_names | self.creates) - self.deletes
        actual = set(self.manifest.names())
        if expected != actual:
            raise AssertionError(
                f"manifest algebra violated: expected {sorted(expected)}, got {sorted(actual)}"
            )


@dataclass
class SnapshotPayload:
    """Serialized namespace: bytes for every restorable variable."""

    entries: dict[str, bytes]
    manifest: VariableManifest

    def non_restorable(self) -> list[str]:
        return [e.name for e in self.manifest if not e.restorable]


@dataclass
class BackendConfig:
    kind: str = "toy"  # "toy" | "external"
    command: str | list[str] | None = None
    execute_timeout_ms: int = 120_000
    snapshot_timeout_ms: int = 120_000

    def __post_init__(self):
        if self.kind not in ("toy", "external"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.execute_timeout_ms <= 0 or self.snapshot_timeout_ms <= 0:
            raise ValueError("timeouts must be positive")
        if self.kind == "external" and not self.command:
            raise ValueError("external backend requires a launch command")


class ToyBackend:
    """In-process deterministic backend over the toy cell language."""

    dialect = "toy"

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self.namespace: dict[str, toylang.ToyValue] = {}
        self.crashed = False

    def _check_live(self) -> None:
        if self.crashed:
            raise BackendCrash("backend previously crashed")

    def _manifest(self) -> VariableManifest:
        entries = []
        for name in sorted(self.namespace):
            value = self.namespace[name]
            encoded = toylang.encode_value(value)
            entries.append(
                ManifestEntry(
                    name=name,
                    type_tag=toylang.value_type_tag(value),
                    byte_size=len(encoded),
                    value_digest=toylang.value_digest(value),
                )
            )
        return VariableManifest(entries)

    def execute(self, cell: CellSource) -> ExecOutcome:
        self._check_live()
        prior_names = set(self.namespace)
        deadline = time.perf_counter() + self.config.execute_timeout_ms / 1000.0
        start = time.perf_counter()
        try:
            effects = toylang.run_cell(cell.source, self.namespace, deadline)
        except CellTimeout:
            self.crashed = True
            raise
        duration_ms = int(round((time.perf_counter() - start) * 1000))
        post_names = set(self.namespace)
        writes = effects.assigned & post_names
        creates = writes - prior_names
        deletes = prior_names - post_names
        return ExecOutcome(
            status=effects.status,
            stdout="",
            stderr="",
            error_name=effects.error_name,
            error_message=effects.error_message,
            duration_ms=duration_ms,
            reads=effects.reads,
            writes=writes,
            creates=creates,
            deletes=deletes,
            manifest=self._manifest(),
        )

    def snapshot(self) -> SnapshotPayload:
        self._check_live()
        entries = {
            name: toylang.encode_value(value) for name, value in self.namespace.items()
        }
        return SnapshotPayload(entries=entries, manifest=self._manifest())

    def restore(self, payload: SnapshotPayload) -> None:
        self._check_live()
        bad = payload.non_restorable()
        if bad:
            raise RestoreRefusedError(bad)
        restored: dict[str, toylang.ToyValue] = {}
        for entry in payload.manifest:
            data = payload.entries[entry.name]
            restored[entry.name] = toylang.decode_value(entry.type_tag, data)
        self.namespace.clear()
        self.namespace.update(restored)

    def reset(self) -> int:
        self._check_live()
        start = time.perf_counter()
        self.namespace.clear()
        return int(round((time.perf_counter() - start) * 1000))

    def list_vars(self) -> list[str]:
        self._check_live()
        return sorted(self.namespace)

    def close(self) -> None:
        self.namespace.clear()


class ExternalBackend:
    """Client for a backend child process speaking the wire protocol."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.crashed = False
        self.dialect = "unknown"
        self._next_id = 0
        self._proc: subprocess.Popen | None = None
        self._responses: queue.Queue[str | None] = queue.Queue()
        self._launch()

    @property
    def _command(self) -> list[str]:
        cmd = self.config.command
        return shlex.split(cmd) if isinstance(cmd, str) else list(cmd or [])

    def _launch(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendLaunchError(f"cannot launch backend: {exc}") from exc
        # Bind the queue at thread start: a reader left over from a previous
        # process must not deliver its EOF into the relaunched session.
        self._responses = queue.Queue()
        reader = threading.Thread(
            target=self._read_loop, args=(self._proc, self._responses), daemon=True
        )
        reader.start()
        hello = self._request("hello", {"protocol": wire.PROTOCOL_VERSION})
        theirs = hello.get("protocol")
        if theirs != wire.PROTOCOL_VERSION:
            self.close()
            raise VersionMismatchError(wire.PROTOCOL_VERSION, theirs)
        self.dialect = hello.get("dialect", "unknown")

    def _read_loop(self, proc: subprocess.Popen, responses: queue.Queue) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            responses.put(line)
        responses.put(None)  # EOF marker

    def _kill(self) -> None:
        self.crashed = True
        if self._proc and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def _request(self, op: str, payload: dict, timeout_ms: int | None = None) -> dict:
        if self.crashed:
            raise BackendCrash("backend previously crashed")
        if self._proc is None or self._proc.poll() is not None:
            self.crashed = True
            raise BackendCrash("backend process is not running")
        self._next_id += 1
        request_id = self._next_id
        line = json.dumps({"id": request_id, "op": op, "payload": payload})
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise BackendCrash(f"backend pipe closed: {exc}") from exc
        timeout_s = (timeout_ms or self.config.execute_timeout_ms) / 1000.0
        try:
            raw = self._responses.get(timeout=timeout_s)
        except queue.Empty:
            self._kill()
            raise CellTimeout(f"backend did not answer {op!r} within {timeout_s:.1f}s") from None
        if raw is None:
            self._kill()
            raise BackendCrash(f"backend exited while handling {op!r}")
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as exc:
            self._kill()
            raise ProtocolError(f"unparseable response line: {raw!r}") from exc
        if response.get("id") != request_id:
            self._kill()
            raise ProtocolError(
                f"response id {response.get('id')} does not match request {request_id}"
            )
        if response.get("status") == "error":
            detail = response.get("payload", {})
            raise ProtocolError(f"backend error on {op!r}: {detail.get('message', detail)}")
        return response.get("payload", {})

    def execute(self, cell: CellSource) -> ExecOutcome:
        payload = self._request(
            "execute",
            {"source": cell.source, "step_label": cell.step_label},
            self.config.execute_timeout_ms,
        )
        return wire.outcome_from_wire(payload)

    def snapshot(self) -> SnapshotPayload:
        payload = self._request("snapshot", {}, self.config.snapshot_timeout_ms)
        return wire.snapshot_from_wire(payload)

    def restore(self, payload: SnapshotPayload) -> None:
        bad = payload.non_restorable()
        if bad:
            raise RestoreRefusedError(bad)
        self._request("restore", wire.snapshot_to_wire(payload), self.config.snapshot_timeout_ms)

    def reset(self) -> int:
        """Kernel restart: relaunch the process and measure time to ready."""
        start = time.perf_counter()
        self.shutdown()
        self.crashed = False
        self._launch()
        return max(1, int(round((time.perf_counter() - start) * 1000)))

    def wire_reset(self) -> None:
        """The in-band reset op (namespace clear without a process restart)."""
        self._request("reset", {})

    def list_vars(self) -> list[str]:
        payload = self._request("list_vars", {})
        return list(payload.get("names", []))

    def shutdown(self) -> None:
        if self._proc and self._proc.poll() is None and not self.crashed:
            try:
                self._request("shutdown", {}, 2000)
            except (BackendCrash, CellTimeout, ProtocolError):
                pass
        if self._proc and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def close(self) -> None:
        self.shutdown()


Backend = ToyBackend | ExternalBackend


def start_backend(config: BackendConfig) -> Backend:
    """Launch a backend per the config; the handle answers with an empty namespace."""
    if config.kind == "toy":
        return ToyBackend(config)
    return ExternalBackend(config)
