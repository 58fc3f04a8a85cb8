"""Exception types shared across the package."""


class BranchBenchError(Exception):
    """Base class for all package errors."""


# --- store ---

class StoreError(BranchBenchError):
    pass


class StoreWriteError(StoreError):
    """I/O failure while persisting a chunk; carries the chunk index."""

    def __init__(self, message: str, chunk_index: int):
        super().__init__(message)
        self.chunk_index = chunk_index


class IntegrityError(StoreError):
    """A referenced object is missing; carries the offending object id."""

    def __init__(self, message: str, object_id: str):
        super().__init__(message)
        self.object_id = object_id


class CorruptionError(StoreError):
    """Stored bytes disagree with their recorded length or digest."""


class UnknownCommitError(StoreError):
    def __init__(self, commit_id: str):
        super().__init__(f"unknown commit {commit_id!r}")
        self.commit_id = commit_id


class NoCommonAncestorError(StoreError):
    """The two commits live in disjoint histories."""


class AlgorithmMismatchError(StoreError):
    """Store was created with a different digest algorithm."""


# --- backend ---

class BackendError(BranchBenchError):
    pass


class BackendLaunchError(BackendError):
    pass


class VersionMismatchError(BackendError):
    def __init__(self, ours: int, theirs: object):
        super().__init__(f"protocol version mismatch: we speak {ours}, backend speaks {theirs}")
        self.ours = ours
        self.theirs = theirs


class BackendCrash(BackendError):
    """The backend process died or stopped answering; the session is unusable."""


class CellTimeout(BackendCrash):
    """A cell exceeded its execution budget; the backend was killed."""


class RestoreRefusedError(BackendError):
    """Restore rejected because some entries are not restorable."""

    def __init__(self, variables: list[str]):
        super().__init__(f"cannot restore non-restorable variables: {', '.join(sorted(variables))}")
        self.variables = sorted(variables)


class ProtocolError(BackendError):
    """Malformed or out-of-order wire traffic."""


# --- agent ---

class AgentError(BranchBenchError):
    pass


class PlanParseError(AgentError):
    """Plan response had no numbered step lines; carries the raw text."""

    def __init__(self, raw_text: str):
        super().__init__("could not parse any numbered steps from plan response")
        self.raw_text = raw_text


class GenerationError(AgentError):
    pass


class TransportError(AgentError):
    """Model endpoint unreachable after the configured retries."""


class ContractViolationError(AgentError):
    pass


class AnchorMissingError(AgentError):
    def __init__(self, commit_id: str):
        super().__init__(f"no message pair is anchored to commit {commit_id!r}")
        self.commit_id = commit_id


# --- plans, traces, metrics ---

class PlanValidationError(BranchBenchError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TraceSchemaError(BranchBenchError):
    def __init__(self, message: str, event_seq: int | None = None):
        super().__init__(message)
        self.event_seq = event_seq


class IncomparableTracesError(BranchBenchError):
    """Traces under comparison do not come from the same plan and seed."""


class SessionCrashed(BranchBenchError):
    """The backend died mid-session; a partial trace was kept."""
