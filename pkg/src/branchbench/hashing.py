"""Content digests: fixed 256-bit hashes rendered as 64 lowercase hex chars."""

import hashlib

# 256-bit algorithms a store may record at creation time.
SUPPORTED_ALGORITHMS = ("sha256", "sha3_256", "blake2s")

DEFAULT_ALGORITHM = "sha256"

HEX_DIGEST_LEN = 64


def digest_bytes(data: bytes, algorithm: str = DEFAULT_ALGORITHM) -> str:
    if algorithm not in SUPPORTED_ALGORITHMS:
        raise ValueError(f"unsupported digest algorithm {algorithm!r}")
    return hashlib.new(algorithm, data).hexdigest()


def is_object_id(value: str) -> bool:
    return (
        isinstance(value, str)
        and len(value) == HEX_DIGEST_LEN
        and all(c in "0123456789abcdef" for c in value)
    )
