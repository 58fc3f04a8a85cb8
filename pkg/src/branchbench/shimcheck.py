"""Backend conformance vectors: the contract any execution backend must pass.

Each vector drives a live backend through the wire-visible operations and
checks dialect-portable facts: statuses, read/write/create/delete sets,
manifest names, digest shapes, snapshot/restore fixed points, reset
semantics, error shapes, and hidden-state cleanliness. Cell sources are
provided per dialect ("toy", "javascript", "python"); a backend announces
its dialect in the hello handshake and is run against the matching
sources. The suite definition is data, so its hash pins the contract
version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .backend import Backend, BackendConfig, CellSource, ExternalBackend, ToyBackend
from .errors import BranchBenchError
from .hashing import digest_bytes, is_object_id

SUITE_VERSION = 1

# Dialect-keyed sources. The same logical cell, one entry per language.
VECTORS: list[dict] = [
    {
        "name": "execute-create",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "x = 3", "javascript": "x = 3", "python": "x = 3"},
                "expect": {
                    "status": "ok",
                    "reads": [],
                    "creates": ["x"],
                    "manifest_names": ["x"],
                    "digests_are_hex": True,
                },
            },
        ],
    },
    {
        "name": "execute-read-write",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "x = 3", "javascript": "x = 3", "python": "x = 3"},
                "expect": {"status": "ok"},
            },
            {
                "op": "execute",
                "source": {"toy": "y = x * 2", "javascript": "y = x * 2", "python": "y = x * 2"},
                "expect": {
                    "status": "ok",
                    "reads": ["x"],
                    "writes": ["y"],
                    "creates": ["y"],
                    "manifest_names": ["x", "y"],
                },
            },
        ],
    },
    {
        "name": "execute-error-partial-effects",
        "steps": [
            {
                "op": "execute",
                "source": {
                    "toy": "a1 = 1\nfail boom\na2 = 2",
                    "javascript": "a1 = 1; null.boom; a2 = 2",
                    "python": "a1 = 1\nraise RuntimeError('boom')\na2 = 2",
                },
                "expect": {
                    "status": "error",
                    "error_name_present": True,
                    "manifest_contains": ["a1"],
                    "manifest_excludes": ["a2"],
                },
            },
        ],
    },
    {
        "name": "error-names-missing-variable",
        "steps": [
            {
                "op": "execute",
                "source": {
                    "toy": "q = missing_name + 1",
                    "javascript": "q = missing_name + 1",
                    "python": "q = missing_name + 1",
                },
                "expect": {
                    "status": "error",
                    "error_name_present": True,
                    "error_message_contains": "missing_name",
                },
            },
        ],
    },
    {
        "name": "delete-removes-from-manifest",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "d = 5", "javascript": "d = 5", "python": "d = 5"},
                "expect": {"status": "ok", "manifest_names": ["d"]},
            },
            {
                "op": "execute",
                "source": {"toy": "del d", "javascript": "delete d", "python": "del d"},
                "expect": {"status": "ok", "deletes": ["d"], "manifest_names": []},
            },
        ],
    },
    {
        "name": "snapshot-restore-fixed-point",
        "steps": [
            {
                "op": "execute",
                "source": {
                    "toy": "k1 = 7\nk2 = k1 + 1",
                    "javascript": "k1 = 7; k2 = k1 + 1",
                    "python": "k1 = 7\nk2 = k1 + 1",
                },
                "expect": {"status": "ok"},
            },
            {"op": "snapshot_stash", "key": "base"},
            {
                "op": "execute",
                "source": {
                    "toy": "k1 = 999\nextra = 1",
                    "javascript": "k1 = 999; extra = 1",
                    "python": "k1 = 999\nextra = 1",
                },
                "expect": {"status": "ok"},
            },
            {"op": "restore_stashed", "key": "base"},
            {"op": "expect_vars", "names": ["k1", "k2"]},
            {"op": "expect_digests_match_stash", "key": "base"},
        ],
    },
    {
        "name": "reset-clears-namespace",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "r1 = 1", "javascript": "r1 = 1", "python": "r1 = 1"},
                "expect": {"status": "ok"},
            },
            {"op": "reset"},
            {"op": "expect_vars", "names": []},
        ],
    },
    {
        "name": "hidden-state-cleanliness",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "h1 = 1", "javascript": "h1 = 1", "python": "h1 = 1"},
                "expect": {"status": "ok"},
            },
            {
                "op": "execute",
                "source": {
                    "toy": "h2 = h1 + 1",
                    "javascript": "h2 = h1 + 1",
                    "python": "h2 = h1 + 1",
                },
                "expect": {"status": "ok"},
            },
            # exactly the user-created variables, nothing the shim leaked
            {"op": "expect_vars", "names": ["h1", "h2"]},
        ],
    },
    {
        "name": "digest-stability-across-reruns",
        "steps": [
            {
                "op": "execute",
                "source": {"toy": "s1 = 41", "javascript": "s1 = 41", "python": "s1 = 41"},
                "expect": {"status": "ok"},
            },
            {"op": "digest_stash", "key": "s1_before", "variable": "s1"},
            {
                "op": "execute",
                "source": {"toy": "s1 = 41", "javascript": "s1 = 41", "python": "s1 = 41"},
                "expect": {"status": "ok"},
            },
            {"op": "expect_digest_equals_stash", "key": "s1_before", "variable": "s1"},
        ],
    },
]


def suite_hash() -> str:
    material = {"version": SUITE_VERSION, "vectors": VECTORS}
    return digest_bytes(json.dumps(material, sort_keys=True).encode("utf-8"))


@dataclass
class VectorResult:
    name: str
    passed: bool
    detail: str = ""


class _VectorFailure(BranchBenchError):
    pass


def _check_execute(outcome, expect: dict) -> None:
    if "status" in expect and outcome.status != expect["status"]:
        raise _VectorFailure(
            f"status {outcome.status!r} != {expect['status']!r} "
            f"({outcome.error_name}: {outcome.error_message})"
        )
    for key, attr in (("reads", "reads"), ("writes", "writes"),
                      ("creates", "creates"), ("deletes", "deletes")):
        if key in expect and sorted(getattr(outcome, attr)) != sorted(expect[key]):
            raise _VectorFailure(f"{key} {sorted(getattr(outcome, attr))} != {sorted(expect[key])}")
    names = outcome.manifest.names()
    if "manifest_names" in expect and names != sorted(expect["manifest_names"]):
        raise _VectorFailure(f"manifest names {names} != {sorted(expect['manifest_names'])}")
    for name in expect.get("manifest_contains", []):
        if name not in names:
            raise _VectorFailure(f"manifest lacks {name!r}")
    for name in expect.get("manifest_excludes", []):
        if name in names:
            raise _VectorFailure(f"manifest unexpectedly contains {name!r}")
    if expect.get("error_name_present") and not outcome.error_name:
        raise _VectorFailure("error_name missing on failed cell")
    needle = expect.get("error_message_contains")
    if needle and needle not in (outcome.error_message or ""):
        raise _VectorFailure(f"error message {outcome.error_message!r} lacks {needle!r}")
    if expect.get("digests_are_hex"):
        for entry in outcome.manifest:
            if not is_object_id(entry.value_digest):
                raise _VectorFailure(f"{entry.name} digest is not 64-hex")


def _run_vector(backend: Backend, dialect: str, vector: dict) -> None:
    stash: dict[str, object] = {}
    for step in vector["steps"]:
        op = step["op"]
        if op == "execute":
            sources = step["source"]
            if dialect not in sources:
                raise _VectorFailure(f"no {dialect!r} source for this vector")
            outcome = backend.execute(CellSource(sources[dialect]))
            _check_execute(outcome, step.get("expect", {}))
        elif op == "snapshot_stash":
            stash[step["key"]] = backend.snapshot()
        elif op == "restore_stashed":
            backend.restore(stash[step["key"]])
        elif op == "reset":
            if isinstance(backend, ExternalBackend):
                backend.wire_reset()
            else:
                backend.reset()
        elif op == "expect_vars":
            names = backend.list_vars()
            if names != sorted(step["names"]):
                raise _VectorFailure(f"list_vars {names} != {sorted(step['names'])}")
        elif op == "expect_digests_match_stash":
            baseline = stash[step["key"]].manifest.digests()
            current = backend.snapshot().manifest.digests()
            if baseline != current:
                raise _VectorFailure("digests changed across snapshot/restore round trip")
        elif op == "digest_stash":
            current = backend.snapshot().manifest.digests()
            stash[step["key"]] = current[step["variable"]]
        elif op == "expect_digest_equals_stash":
            current = backend.snapshot().manifest.digests()
            if current[step["variable"]] != stash[step["key"]]:
                raise _VectorFailure(f"digest of {step['variable']!r} drifted across reruns")
        else:
            raise _VectorFailure(f"unknown step op {op!r}")


def run_suite(
    command: str | list[str] | None = None,
    backend: Backend | None = None,
    execute_timeout_ms: int = 120_000,
) -> list[VectorResult]:
    """Run every vector against a backend command (or an in-process handle).

    Each vector starts from a clean namespace: the backend is reset in
    between via the wire-level reset op.
    """
    own = backend is None
    if backend is None:
        if command is None:
            backend = ToyBackend()
        else:
            backend = ExternalBackend(
                BackendConfig(
                    kind="external", command=command, execute_timeout_ms=execute_timeout_ms
                )
            )
    dialect = backend.dialect
    results = []
    try:
        for vector in VECTORS:
            try:
                if isinstance(backend, ExternalBackend):
                    backend.wire_reset()
                else:
                    backend.reset()
                _run_vector(backend, dialect, vector)
                results.append(VectorResult(vector["name"], True))
            except (BranchBenchError, KeyError) as exc:
                results.append(VectorResult(vector["name"], False, str(exc)))
    finally:
        if own:
            backend.close()
    return results
