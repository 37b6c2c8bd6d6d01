"""Exception hierarchy shared by every TableVault subsystem.

The command-line frontend maps these onto process exit codes, so new
exception types should subclass one of the four user-facing families:
ValidationError (bad request), NotFound, Busy (lock timeout) or
Reverted (operation rolled back).
"""

from __future__ import annotations


class TableVaultError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TableVaultError):
    """The request is structurally or semantically invalid."""


class RepositoryConflict(ValidationError):
    """Target path exists and is neither empty nor a repository."""


class NameConflict(ValidationError):
    """A table, builder or code module with this name already exists."""


class StateError(ValidationError):
    """The target exists but is in the wrong lifecycle state."""


class BuilderValidationError(ValidationError):
    """A builder document failed validation.

    ``field`` names the offending document field when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ScopeError(ValidationError):
    """An operation attempted to write outside its locked targets."""


class LineageError(ValidationError):
    """A lineage record references an uncommitted or unknown instance."""


class AccessDenied(TableVaultError):
    """Caller is not the author (or an author-chain ancestor) of the target."""


class NotFound(TableVaultError):
    """The referenced repository, table, instance or record does not exist."""


class Busy(TableVaultError):
    """Lock acquisition timed out against a conflicting holder."""


class Reverted(TableVaultError):
    """The operation was automatically rolled back.

    ``reason`` carries the failed validation or executor error, ``op_id``
    the reverted operation.
    """

    def __init__(self, reason: str, op_id: str | None = None):
        super().__init__(reason)
        self.reason = reason
        self.op_id = op_id


class OperationPaused(TableVaultError):
    """The operation was paused and holds its locks; resume or stop it."""

    def __init__(self, op_id: str, reason: str = ""):
        super().__init__(f"operation {op_id} paused" + (f": {reason}" if reason else ""))
        self.op_id = op_id
        self.reason = reason


class ParseError(TableVaultError, ValueError):
    """A reference string failed to parse; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ResolveError(TableVaultError):
    """A parsed reference cannot be resolved against repository state."""


class ContextError(ResolveError):
    """The reference needs execution context (row index, self) that is absent."""


class RangeError(ResolveError, IndexError):
    """A point index fell outside the referenced selection."""


class RefTypeError(ResolveError, TypeError):
    """A non-scalar value appeared where a scalar is required."""
