"""Object store: chunked blobs, commit DAG, dedup accounting."""

import random

import pytest

from branchbench.errors import (
    AlgorithmMismatchError,
    CorruptionError,
    IntegrityError,
    NoCommonAncestorError,
    UnknownCommitError,
)
from branchbench.hashing import digest_bytes
from branchbench.store import (
    BlobRef,
    ExecRecord,
    ManifestEntry,
    Store,
    VariableManifest,
    commit_digest,
)

CHUNK = 4096


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "store", chunk_size=CHUNK)


def manifest_of(**values: bytes) -> VariableManifest:
    entries = [
        ManifestEntry(name, "bytes", len(data), digest_bytes(data))
        for name, data in values.items()
    ]
    return VariableManifest(entries)


OK = ExecRecord("ok")


# --- blobs ---

def test_empty_blob(store):
    ref = store.put_blob(b"")
    assert ref == BlobRef(0, ())
    assert store.get_blob(ref) == b""


def test_put_blob_is_idempotent(store):
    payload = bytes(range(256)) * 4  # 1 KiB
    ref1 = store.put_blob(payload)
    before = store.storage_stats().total_object_bytes
    ref2 = store.put_blob(payload)
    assert ref1 == ref2
    assert store.storage_stats().total_object_bytes == before


def test_chunking_shape_and_content(store):
    payload = bytes(i % 251 for i in range(int(2.5 * CHUNK)))
    ref = store.put_blob(payload)
    assert len(ref.chunk_ids) == 3
    # reassemble chunk-by-chunk and compare byte-for-byte with the input
    rebuilt = b""
    for i, object_id in enumerate(ref.chunk_ids):
        piece = store.get_blob(BlobRef(min(CHUNK, len(payload) - i * CHUNK), (object_id,)))
        rebuilt += piece
    assert rebuilt == payload
    lengths = [CHUNK, CHUNK, CHUNK // 2]
    for object_id, expected in zip(ref.chunk_ids, lengths):
        assert store._object_path(object_id).stat().st_size == expected


def test_round_trip_random_payloads(store):
    rng = random.Random(7)
    for _ in range(100):
        payload = rng.randbytes(rng.randint(0, 4 * CHUNK))
        assert store.get_blob(store.put_blob(payload)) == payload


def test_missing_chunk_is_integrity_error(store):
    fake = "ab" * 32
    with pytest.raises(IntegrityError) as err:
        store.get_blob(BlobRef(10, (fake,)))
    assert fake in str(err.value)
    assert err.value.object_id == fake


def test_length_mismatch_is_corruption_error(store):
    ref = store.put_blob(b"hello world")
    with pytest.raises(CorruptionError):
        store.get_blob(BlobRef(ref.total_bytes + 1, ref.chunk_ids))


# --- commits ---

def test_commit_id_is_deterministic(store):
    m = manifest_of(x=b"3")
    c1 = store.create_commit(None, "x = 3", OK, m)
    c2 = store.create_commit(None, "x = 3", OK, m)
    assert c1.id == c2.id


def test_commit_id_ignores_timing_and_error_text(store):
    m = manifest_of(x=b"3")
    a = store.create_commit(None, "boom", ExecRecord("error", "Fail", 17), m)
    b_id = commit_digest(None, "boom", "error", m)
    assert a.id == b_id  # duration and error name are excluded from the digest


def test_root_commit_ancestry_is_itself(store):
    root = store.create_commit(None, "", OK, VariableManifest())
    assert [c.id for c in store.ancestry(root.id)] == [root.id]


def test_unknown_parent_rejected(store):
    with pytest.raises(UnknownCommitError):
        store.create_commit("0" * 64, "x = 1", OK, VariableManifest())


def forked_commits(store):
    """c1 -> c2 -> c3 -> c4 with a fork c3' off c2."""
    c1 = store.create_commit(None, "df = 10", OK, manifest_of(df=b"10"))
    c2 = store.create_commit(c1.id, "x = df", OK, manifest_of(df=b"10", x=b"10"))
    c3 = store.create_commit(c2.id, "df = df - 3", OK, manifest_of(df=b"7", x=b"10"))
    c4 = store.create_commit(c3.id, "y = df", OK, manifest_of(df=b"7", x=b"10", y=b"7"))
    c3p = store.create_commit(c2.id, "df = df + 5", OK, manifest_of(df=b"15", x=b"10"))
    return c1, c2, c3, c4, c3p


def test_revisit_plan_fork_structure(store):
    c1, c2, c3, c4, c3p = forked_commits(store)
    assert [c.id for c in store.ancestry(c3p.id)] == [c1.id, c2.id, c3p.id]
    assert [c.id for c in store.ancestry(c4.id)] == [c1.id, c2.id, c3.id, c4.id]
    assert store.lowest_common_ancestor(c4.id, c3p.id) == c2.id
    assert store.lowest_common_ancestor(c4.id, c4.id) == c4.id


def test_dag_acyclic_by_sequence(store):
    _, c2, c3, c4, c3p = forked_commits(store)
    for commit in (c2, c3, c4, c3p):
        parent = store.get_commit(commit.parent)
        assert parent.created_seq < commit.created_seq


def test_disjoint_roots_have_no_common_ancestor(store):
    r1 = store.create_commit(None, "a = 1", OK, manifest_of(a=b"1"))
    r2 = store.create_commit(None, "b = 2", OK, manifest_of(b=b"2"))
    with pytest.raises(NoCommonAncestorError):
        store.lowest_common_ancestor(r1.id, r2.id)


def brute_force_ancestors(parents: dict[int, int | None], node: int) -> list[int]:
    path = []
    cur: int | None = node
    while cur is not None:
        path.append(cur)
        cur = parents[cur]
    return list(reversed(path))


def test_ancestry_and_lca_against_brute_force(tmp_path):
    # random parent-pointer DAGs up to 50 commits, 100 seeds
    for seed in range(100):
        rng = random.Random(seed)
        store = Store(tmp_path / f"s{seed}", chunk_size=CHUNK)
        n = rng.randint(2, 50)
        parents: dict[int, int | None] = {0: None}
        ids = [store.create_commit(None, "c0", OK, manifest_of(v=b"0")).id]
        for i in range(1, n):
            p = rng.randrange(i)
            parents[i] = p
            ids.append(
                store.create_commit(ids[p], f"c{i}", OK, manifest_of(v=str(i).encode())).id
            )
        for _ in range(10):
            a, b = rng.randrange(n), rng.randrange(n)
            got = [c.id for c in store.ancestry(ids[a])]
            want = [ids[i] for i in brute_force_ancestors(parents, a)]
            assert got == want
            common = set(brute_force_ancestors(parents, a)) & set(
                brute_force_ancestors(parents, b)
            )
            deepest = max(common, key=lambda i: store.get_commit(ids[i]).created_seq)
            assert store.lowest_common_ancestor(ids[a], ids[b]) == ids[deepest]


# --- dedup accounting ---

def test_committing_unchanged_variable_adds_no_objects(store):
    data = b"z" * (CHUNK + 10)
    ref = store.put_blob(data)
    m = VariableManifest(
        [ManifestEntry("big", "bytes", len(data), digest_bytes(data), ref)]
    )
    c1 = store.create_commit(None, "cell 1", OK, m)
    before = store.storage_stats().total_object_bytes
    store.put_blob(data)  # same variable committed again
    store.create_commit(c1.id, "cell 2", OK, m)
    stats = store.storage_stats()
    assert stats.total_object_bytes == before
    assert stats.logical_bytes == 2 * len(data)
    assert stats.dedup_ratio > 1


def test_dedup_versus_no_dedup_sum(store):
    # N commits each changing 1 of V variables: object growth tracks changed
    # bytes, not N*V
    values = {f"v{i}": (b"%02d" % i) * 200 for i in range(10)}
    refs = {k: store.put_blob(v) for k, v in values.items()}
    no_dedup_sum = 0
    parent = None
    for step in range(20):
        target = f"v{step % 10}"
        values[target] = (b"S%02d" % step) * 200
        refs[target] = store.put_blob(values[target])
        m = VariableManifest(
            [
                ManifestEntry(k, "bytes", len(v), digest_bytes(v), refs[k])
                for k, v in values.items()
            ]
        )
        parent = store.create_commit(parent, f"cell {step}", OK, m).id
        no_dedup_sum += m.total_byte_size()
    stats = store.storage_stats()
    assert stats.logical_bytes == no_dedup_sum
    assert stats.total_object_bytes < 0.25 * no_dedup_sum


def test_fresh_store_stats(store):
    stats = store.storage_stats()
    assert (stats.object_count, stats.total_object_bytes, stats.logical_bytes) == (0, 0, 0)
    assert stats.dedup_ratio == 0.0


# --- persistence ---

def test_reopen_preserves_commits_and_stats(tmp_path):
    root = tmp_path / "store"
    store = Store(root, chunk_size=CHUNK)
    data = b"payload" * 100
    ref = store.put_blob(data)
    m = VariableManifest([ManifestEntry("x", "bytes", len(data), digest_bytes(data), ref)])
    c1 = store.create_commit(None, "x = ...", OK, m)
    c2 = store.create_commit(c1.id, "again", OK, m)
    stats = store.storage_stats()

    reopened = Store(root)
    assert reopened.chunk_size == CHUNK
    assert reopened.get_blob(ref) == data
    assert [c.id for c in reopened.ancestry(c2.id)] == [c1.id, c2.id]
    assert reopened.storage_stats().to_json() == stats.to_json()
    # same logical content still digests to the same id after reopen
    assert commit_digest(None, "x = ...", "ok", m) == c1.id


def test_algorithm_recorded_and_mixing_rejected(tmp_path):
    Store(tmp_path / "store", chunk_size=CHUNK, algorithm="sha256")
    with pytest.raises(AlgorithmMismatchError):
        Store(tmp_path / "store", algorithm="sha3_256")
    with pytest.raises(AlgorithmMismatchError):
        Store(tmp_path / "other", algorithm="md5")


def test_head_and_refs(store):
    c1 = store.create_commit(None, "x = 1", OK, manifest_of(x=b"1"))
    store.set_head(c1.id)
    store.set_ref("branch-1", c1.id)
    assert store.get_head() == c1.id
    assert store.get_ref("branch-1") == c1.id
    assert store.get_ref("missing") is None
    with pytest.raises(UnknownCommitError):
        store.set_head("f" * 64)
