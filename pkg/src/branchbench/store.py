"""Content-addressed object store and commit DAG for code+data history.

On-disk layout under the store root:

    meta                    digest algorithm, chunk size, format version
    objects/xx/<62 hex>     chunk payloads, fanned out by digest prefix
    commits/<64 hex>        one canonical JSON record per commit
    HEAD                    current commit id for the session
    refs/<label>            named commit pointers

Blobs are split into fixed-size chunks so no single write exceeds
chunk_size, and identical chunks are stored once. Commit ids are digests
over the logical commit content only (parent, cell source, status,
manifest), so replaying a session reproduces identical ids; timing fields
and chunk layout never influence the id.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AlgorithmMismatchError,
    CorruptionError,
    IntegrityError,
    NoCommonAncestorError,
    StoreWriteError,
    UnknownCommitError,
)
from .hashing import DEFAULT_ALGORITHM, SUPPORTED_ALGORITHMS, digest_bytes, is_object_id

FORMAT_VERSION = 1

DEFAULT_CHUNK_SIZE = 16 * 1024 * 1024


@dataclass(frozen=True)
class BlobRef:
    """Pointer to a chunked byte string."""

    total_bytes: int
    chunk_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {"total_bytes": self.total_bytes, "chunk_ids": list(self.chunk_ids)}

    @classmethod
    def from_json(cls, obj: dict) -> "BlobRef":
        return cls(int(obj["total_bytes"]), tuple(obj["chunk_ids"]))


@dataclass(frozen=True)
class ManifestEntry:
    """One variable of a commit's data state."""

    name: str
    type_tag: str
    byte_size: int
    value_digest: str
    blob: BlobRef | None = None
    restorable: bool = True

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "type_tag": self.type_tag,
            "byte_size": self.byte_size,
            "value_digest": self.value_digest,
            "blob": self.blob.to_json() if self.blob else None,
            "restorable": self.restorable,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        blob = BlobRef.from_json(obj["blob"]) if obj.get("blob") else None
        return cls(
            obj["name"],
            obj["type_tag"],
            int(obj["byte_size"]),
            obj["value_digest"],
            blob,
            bool(obj["restorable"]),
        )


class VariableManifest:
    """Name-sorted, duplicate-free catalogue of a namespace."""

    def __init__(self, entries: list[ManifestEntry] | tuple[ManifestEntry, ...] = ()):
        ordered = sorted(entries, key=lambda e: e.name)
        names = [e.name for e in ordered]
        if len(set(names)) != len(names):
            raise ValueError("manifest entries must have unique names")
        self.entries: tuple[ManifestEntry, ...] = tuple(ordered)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VariableManifest) and self.entries == other.entries

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> ManifestEntry | None:
        for e in self.entries:
            if e.name == name:
                return e
        return None

    def digests(self) -> dict[str, str]:
        return {e.name: e.value_digest for e in self.entries}

    def total_byte_size(self) -> int:
        return sum(e.byte_size for e in self.entries)

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]

    @classmethod
    def from_json(cls, obj: list[dict]) -> "VariableManifest":
        return cls([ManifestEntry.from_json(e) for e in obj])


@dataclass(frozen=True)
class ExecRecord:
    """Execution summary carried by a commit."""

    status: str  # "ok" | "error"
    error_name: str | None = None
    duration_ms: int = 0


@dataclass(frozen=True)
class Commit:
    id: str
    parent: str | None
    cell_source: str
    exec_summary: ExecRecord
    manifest: VariableManifest
    created_seq: int


def commit_digest(
    parent: str | None,
    cell_source: str,
    status: str,
    manifest: VariableManifest,
    algorithm: str = DEFAULT_ALGORITHM,
) -> str:
    """Commit id over logical content only.

    Durations, error text, sequence numbers, and chunk layout are all
    excluded so that a replay of the same cells over the same data
    reproduces the same ids, regardless of chunk_size.
    """
    material = {
        "parent": parent,
        "cell_source": cell_source,
        "status": status,
        "manifest": [
            [e.name, e.type_tag, e.byte_size, e.value_digest, e.restorable]
            for e in manifest
        ],
    }
    encoded = json.dumps(material, separators=(",", ":"), ensure_ascii=True).encode("utf-8")
    return digest_bytes(encoded, algorithm)


@dataclass
class StoreStats:
    object_count: int = 0
    total_object_bytes: int = 0
    logical_bytes: int = 0
    # Convention: a fresh store reports dedup_ratio 0.0.
    dedup_ratio: float = 0.0

    def to_json(self) -> dict:
        return {
            "object_count": self.object_count,
            "total_object_bytes": self.total_object_bytes,
            "logical_bytes": self.logical_bytes,
            "dedup_ratio": self.dedup_ratio,
        }


class Store:
    """Chunked object store plus commit DAG rooted at a directory.

    Safe for concurrent readers with a single writer; sequence numbers
    are handed out under the writer lock.
    """

    def __init__(
        self,
        root: str | Path,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        algorithm: str = DEFAULT_ALGORITHM,
    ):
        self.root = Path(root)
        self._lock = threading.Lock()
        meta_path = self.root / "meta"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text("utf-8"))
            if meta["algorithm"] != algorithm:
                raise AlgorithmMismatchError(
                    f"store uses {meta['algorithm']!r}, requested {algorithm!r}"
                )
            self.algorithm: str = meta["algorithm"]
            self.chunk_size: int = int(meta["chunk_size"])
        else:
            if algorithm not in SUPPORTED_ALGORITHMS:
                raise AlgorithmMismatchError(f"unsupported digest algorithm {algorithm!r}")
            if chunk_size <= 0:
                raise ValueError("chunk_size must be positive")
            self.algorithm = algorithm
            self.chunk_size = chunk_size
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "objects").mkdir(exist_ok=True)
            (self.root / "commits").mkdir(exist_ok=True)
            (self.root / "refs").mkdir(exist_ok=True)
            meta_path.write_text(
                json.dumps(
                    {
                        "algorithm": algorithm,
                        "chunk_size": chunk_size,
                        "format_version": FORMAT_VERSION,
                    },
                    indent=2,
                )
                + "\n",
                "utf-8",
            )
        self._commits: dict[str, Commit] = {}
        self._next_seq = 0
        self._object_count = 0
        self._object_bytes = 0
        self._logical_bytes = 0
        # value digest -> BlobRef for blobs written this session, so
        # committing an unchanged variable skips rechunking entirely.
        self._blob_memo: dict[str, BlobRef] = {}
        self._load()

    # --- loading ---

    def _load(self) -> None:
        for path in (self.root / "objects").glob("??/*"):
            if path.suffix == ".tmp":
                continue
            self._object_count += 1
            self._object_bytes += path.stat().st_size
        for path in (self.root / "commits").iterdir():
            commit = self._read_commit_file(path)
            self._commits[commit.id] = commit
        for commit in self._commits.values():
            self._logical_bytes += commit.manifest.total_byte_size()
            self._next_seq = max(self._next_seq, commit.created_seq + 1)

    def _read_commit_file(self, path: Path) -> Commit:
        obj = json.loads(path.read_text("utf-8"))
        return Commit(
            id=obj["id"],
            parent=obj["parent"],
            cell_source=obj["cell_source"],
            exec_summary=ExecRecord(
                obj["exec_summary"]["status"],
                obj["exec_summary"]["error_name"],
                int(obj["exec_summary"]["duration_ms"]),
            ),
            manifest=VariableManifest.from_json(obj["manifest"]),
            created_seq=int(obj["created_seq"]),
        )

    # --- blobs ---

    def _object_path(self, object_id: str) -> Path:
        return self.root / "objects" / object_id[:2] / object_id[2:]

    def put_blob(self, data: bytes) -> BlobRef:
        chunk_ids = []
        for index, offset in enumerate(range(0, len(data), self.chunk_size)):
            chunk = data[offset : offset + self.chunk_size]
            object_id = digest_bytes(chunk, self.algorithm)
            chunk_ids.append(object_id)
            path = self._object_path(object_id)
            if path.exists():
                continue
            try:
                path.parent.mkdir(exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(chunk)
                tmp.rename(path)
            except OSError as exc:
                raise StoreWriteError(f"failed to write chunk {index}: {exc}", index) from exc
            with self._lock:
                self._object_count += 1
                self._object_bytes += len(chunk)
        return BlobRef(len(data), tuple(chunk_ids))

    def put_blob_memo(self, value_digest: str, data: bytes) -> BlobRef:
        """put_blob, short-circuited when this exact value was stored before."""
        ref = self._blob_memo.get(value_digest)
        if ref is None:
            ref = self.put_blob(data)
            self._blob_memo[value_digest] = ref
        return ref

    def get_blob(self, ref: BlobRef) -> bytes:
        parts = []
        for object_id in ref.chunk_ids:
            path = self._object_path(object_id)
            if not path.exists():
                raise IntegrityError(f"missing chunk object {object_id}", object_id)
            parts.append(path.read_bytes())
        data = b"".join(parts)
        if len(data) != ref.total_bytes:
            raise CorruptionError(
                f"blob length mismatch: expected {ref.total_bytes}, got {len(data)}"
            )
        return data

    def has_object(self, object_id: str) -> bool:
        return self._object_path(object_id).exists()

    # --- commits ---

    def create_commit(
        self,
        parent: str | None,
        cell_source: str,
        exec_summary: ExecRecord,
        manifest: VariableManifest,
    ) -> Commit:
        if parent is not None and parent not in self._commits:
            raise UnknownCommitError(parent)
        commit_id = commit_digest(
            parent, cell_source, exec_summary.status, manifest, self.algorithm
        )
        with self._lock:
            existing = self._commits.get(commit_id)
            if existing is not None:
                return existing
            seq = self._next_seq
            self._next_seq += 1
            commit = Commit(commit_id, parent, cell_source, exec_summary, manifest, seq)
            self._commits[commit_id] = commit
            self._logical_bytes += manifest.total_byte_size()
        record = {
            "id": commit.id,
            "parent": commit.parent,
            "cell_source": commit.cell_source,
            "exec_summary": {
                "status": exec_summary.status,
                "error_name": exec_summary.error_name,
                "duration_ms": exec_summary.duration_ms,
            },
            "manifest": manifest.to_json(),
            "created_seq": seq,
        }
        path = self.root / "commits" / commit.id
        path.write_text(json.dumps(record, separators=(",", ":"), ensure_ascii=True), "utf-8")
        return commit

    def get_commit(self, commit_id: str) -> Commit:
        try:
            return self._commits[commit_id]
        except KeyError:
            raise UnknownCommitError(commit_id) from None

    def has_commit(self, commit_id: str) -> bool:
        return commit_id in self._commits

    def commit_count(self) -> int:
        return len(self._commits)

    def ancestry(self, commit_id: str) -> list[Commit]:
        """Path from the root to commit_id, root first."""
        path = []
        current: str | None = commit_id
        while current is not None:
            commit = self.get_commit(current)
            path.append(commit)
            current = commit.parent
        path.reverse()
        return path

    def lowest_common_ancestor(self, a: str, b: str) -> str:
        path_a = self.ancestry(a)
        path_b = self.ancestry(b)
        if path_a[0].id != path_b[0].id:
            raise NoCommonAncestorError(f"{a} and {b} have disjoint roots")
        lca = path_a[0]
        for ca, cb in zip(path_a, path_b):
            if ca.id != cb.id:
                break
            lca = ca
        return lca.id

    # --- refs ---

    def set_head(self, commit_id: str) -> None:
        self.get_commit(commit_id)
        (self.root / "HEAD").write_text(commit_id + "\n", "utf-8")

    def get_head(self) -> str | None:
        path = self.root / "HEAD"
        if not path.exists():
            return None
        return path.read_text("utf-8").strip()

    def set_ref(self, label: str, commit_id: str) -> None:
        self.get_commit(commit_id)
        if "/" in label or label in ("", ".", ".."):
            raise ValueError(f"invalid ref label {label!r}")
        (self.root / "refs" / label).write_text(commit_id + "\n", "utf-8")

    def get_ref(self, label: str) -> str | None:
        path = self.root / "refs" / label
        if not path.exists():
            return None
        return path.read_text("utf-8").strip()

    # --- stats ---

    def storage_stats(self) -> StoreStats:
        ratio = self._logical_bytes / max(self._object_bytes, 1) if self._object_bytes else 0.0
        return StoreStats(
            object_count=self._object_count,
            total_object_bytes=self._object_bytes,
            logical_bytes=self._logical_bytes,
            dedup_ratio=ratio,
        )
