"""Backend contract: execute semantics, snapshot/restore, external wire client."""

import random
import sys

import pytest

from branchbench.backend import (
    BackendConfig,
    CellSource,
    ExternalBackend,
    SnapshotPayload,
    ToyBackend,
    start_backend,
)
from branchbench.errors import (
    BackendCrash,
    CellTimeout,
    RestoreRefusedError,
    VersionMismatchError,
)
from branchbench.hashing import digest_bytes
from branchbench.store import ManifestEntry, VariableManifest

TOYSERVER = [sys.executable, "-m", "branchbench.toyserver", "--protocol", "1"]


def cell(src: str) -> CellSource:
    return CellSource(src)


@pytest.fixture
def toy():
    return ToyBackend()


@pytest.fixture
def external():
    backend = ExternalBackend(BackendConfig(kind="external", command=TOYSERVER))
    yield backend
    backend.close()


def test_start_backend_toy_is_empty():
    handle = start_backend(BackendConfig(kind="toy"))
    assert handle.list_vars() == []


def test_execute_create(toy):
    out = toy.execute(cell("x = 1 + 2"))
    assert out.status == "ok"
    assert out.reads == set()
    assert out.writes == {"x"} == out.creates
    entry = out.manifest.get("x")
    assert entry is not None and entry.value_digest == digest_bytes(b"3")


def test_execute_read_write(toy):
    toy.execute(cell("x = 3"))
    out = toy.execute(cell("y = x * 2"))
    assert out.reads == {"x"}
    assert out.writes == {"y"}
    assert out.manifest.get("y").value_digest == digest_bytes(b"6")


def test_execute_error_leaves_namespace(toy):
    toy.execute(cell("x = 1"))
    out = toy.execute(cell("fail boom"))
    assert out.status == "error"
    assert out.error_name == "Fail"
    assert out.error_message == "boom"
    assert toy.list_vars() == ["x"]


def test_partial_effects_reported(toy):
    out = toy.execute(cell("a = 1\nfail mid\nb = 2"))
    assert out.status == "error"
    assert out.writes == {"a"}
    assert out.creates == {"a"}
    assert out.manifest.names() == ["a"]


def test_write_then_delete_in_one_cell(toy):
    toy.execute(cell("x = 9"))
    out = toy.execute(cell("x = 5\ndel x"))
    assert out.writes == set()
    assert out.deletes == {"x"}
    out.check_algebra({"x"})
    assert toy.list_vars() == []


def test_manifest_algebra_over_random_cells(toy):
    rng = random.Random(99)
    names = [f"v{i}" for i in range(6)]
    for _ in range(200):
        prior = set(toy.namespace)
        n = rng.choice(names)
        kind = rng.random()
        if kind < 0.5:
            src = f"{n} = {rng.randint(0, 9)}"
        elif kind < 0.7:
            src = f"list {n} {rng.randint(0, 5)}"
        elif kind < 0.85 and prior:
            src = f"del {rng.choice(sorted(prior))}"
        else:
            other = rng.choice(names)
            src = f"{n} = {other} + 1"  # may fail with UnknownVariable
        out = toy.execute(cell(src))
        out.check_algebra(prior)


def test_snapshot_empty(toy):
    payload = toy.snapshot()
    assert payload.entries == {}
    assert len(payload.manifest) == 0


def test_snapshot_restore_round_trip(toy):
    toy.execute(cell("x = 7"))
    payload = toy.snapshot()
    fresh = ToyBackend()
    fresh.restore(payload)
    assert fresh.snapshot().manifest == payload.manifest


def test_restore_replaces_and_prunes(toy):
    toy.execute(cell("x = 3"))
    payload = toy.snapshot()
    toy.execute(cell("x = 9\nz = 1"))
    toy.restore(payload)
    assert toy.list_vars() == ["x"]
    assert toy.namespace["x"] == 3


def test_restore_snapshot_is_fixed_point(toy):
    toy.execute(cell("a = 5\nlist b 4\nc = concat(b, b)"))
    first = toy.snapshot()
    toy.restore(first)
    second = toy.snapshot()
    assert first.manifest == second.manifest
    assert toy.list_vars() == ["a", "b", "c"]


def test_snapshot_digests_match_independent_recomputation(toy):
    for i in range(1000):
        toy.execute(cell(f"list v{i} {i % 7}"))
    payload = toy.snapshot()
    assert len(payload.entries) == 1000
    for entry in payload.manifest:
        assert entry.value_digest == digest_bytes(payload.entries[entry.name])
        assert entry.byte_size == len(payload.entries[entry.name])


def test_randomized_snapshot_reset_restore(toy):
    rng = random.Random(4242)
    for round_no in range(100):
        backend = ToyBackend()
        for i in range(rng.randint(0, 10)):
            if rng.random() < 0.5:
                backend.execute(cell(f"n{i} = {rng.randint(-50, 50)}"))
            else:
                backend.execute(cell(f"list n{i} {rng.randint(0, 8)}"))
        payload = backend.snapshot()
        backend.reset()
        assert backend.list_vars() == []
        backend.restore(payload)
        assert backend.snapshot().manifest == payload.manifest


def test_restore_refused_lists_variables(toy):
    manifest = VariableManifest(
        [
            ManifestEntry("ok_var", "int", 1, digest_bytes(b"1")),
            ManifestEntry("bad_var", "handle", 0, digest_bytes(b""), restorable=False),
        ]
    )
    payload = SnapshotPayload(entries={"ok_var": b"1"}, manifest=manifest)
    with pytest.raises(RestoreRefusedError) as err:
        toy.restore(payload)
    assert err.value.variables == ["bad_var"]


def test_reset_preserves_nothing(toy):
    toy.execute(cell("x = 1"))
    toy.reset()
    assert toy.list_vars() == []
    out = toy.execute(cell("y = x"))
    assert out.status == "error"
    assert out.error_name == "UnknownVariable"


def test_toy_determinism_modulo_durations(toy):
    sources = ["x = 2", "y = x * x", "list z 3", "w = concat(z, z)", "del x", "q = y - 1"]
    outcomes = []
    for _ in range(2):
        backend = ToyBackend()
        run = []
        for src in sources:
            out = backend.execute(cell(src))
            out.duration_ms = 0
            run.append(out)
        outcomes.append(run)
    assert outcomes[0] == outcomes[1]


def test_handles_are_isolated():
    a, b = ToyBackend(), ToyBackend()
    a.execute(cell("x = 1"))
    assert b.list_vars() == []


def test_execute_timeout_marks_crashed():
    backend = ToyBackend(BackendConfig(kind="toy", execute_timeout_ms=50))
    with pytest.raises(CellTimeout):
        backend.execute(cell("sleep 5000"))
    assert backend.crashed
    with pytest.raises(BackendCrash):
        backend.execute(cell("x = 1"))


# --- external backend over the wire ---

def test_external_handshake_and_dialect(external):
    assert external.dialect == "toy"
    assert external.list_vars() == []


def test_external_version_mismatch_names_both_versions():
    bad = TOYSERVER[:-1] + ["2"]
    with pytest.raises(VersionMismatchError) as err:
        ExternalBackend(BackendConfig(kind="external", command=bad))
    assert "1" in str(err.value) and "2" in str(err.value)


def test_external_matches_in_process_toy(external):
    local = ToyBackend()
    sources = ["x = 1 + 2", "y = x * 2", "list z 4", "w = concat(z, z)", "fail oops", "del y"]
    for src in sources:
        remote_out = external.execute(cell(src))
        local_out = local.execute(cell(src))
        remote_out.duration_ms = local_out.duration_ms = 0
        assert remote_out == local_out
    assert external.list_vars() == local.list_vars()


def test_external_snapshot_restore_round_trip(external):
    external.execute(cell("a = 42\nlist b 3"))
    payload = external.snapshot()
    assert payload.entries["a"] == b"42"
    external.execute(cell("a = 0\nc = 1"))
    external.restore(payload)
    assert external.list_vars() == ["a", "b"]
    assert external.snapshot().manifest == payload.manifest


def test_external_restart_measures_time(external):
    external.execute(cell("x = 1"))
    restart_ms = external.reset()
    assert restart_ms > 0
    assert external.list_vars() == []


def test_external_crash_is_distinguishable(external):
    external.execute(cell("x = 1"))
    external._proc.kill()
    external._proc.wait()
    with pytest.raises(BackendCrash):
        external.execute(cell("y = 2"))
    assert external.crashed


def test_external_timeout_kills_backend():
    backend = ExternalBackend(
        BackendConfig(kind="external", command=TOYSERVER, execute_timeout_ms=200)
    )
    try:
        with pytest.raises(CellTimeout):
            backend.execute(cell("sleep 10000"))
        assert backend.crashed
    finally:
        backend.close()


def test_wire_reset_clears_namespace(external):
    external.execute(cell("x = 1"))
    external.wire_reset()
    assert external.list_vars() == []
