"""Error types shared across client, manager and benefactor.

Every error carries a short category code that travels over the wire, so a
failure raised on a daemon surfaces as the same exception class on the client.
"""

from __future__ import annotations


class StorageError(Exception):
    category = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.category)


class NotFoundError(StorageError):
    category = "not_found"


class PurgedError(NotFoundError):
    category = "purged"


class IntegrityError(StorageError):
    category = "integrity"


class SpaceError(StorageError):
    category = "space"


class UnavailableError(StorageError):
    """No benefactor (or no replica) can satisfy the request."""

    category = "unavailable"


class RejectedError(StorageError):
    """The manager refused a mutation (bad commit, unknown tuple...)."""

    category = "rejected"


class ReRegisterError(StorageError):
    """Heartbeat from an id the manager does not know: register again."""

    category = "reregister"


class UsageError(StorageError):
    category = "usage"


class ProtocolError(StorageError):
    """Malformed frame or unknown opcode."""

    category = "protocol"


class ChunkUnavailableError(UnavailableError):
    """Every replica of one chunk failed; identifies the chunk."""

    def __init__(self, chunk_hex: str, message: str = ""):
        self.chunk_hex = chunk_hex
        super().__init__(message or f"chunk {chunk_hex} unavailable")


_BY_CATEGORY = {
    cls.category: cls
    for cls in (
        StorageError,
        NotFoundError,
        PurgedError,
        IntegrityError,
        SpaceError,
        UnavailableError,
        RejectedError,
        ReRegisterError,
        UsageError,
        ProtocolError,
    )
}


def error_for(category: str, message: str) -> StorageError:
    return _BY_CATEGORY.get(category, StorageError)(message)
