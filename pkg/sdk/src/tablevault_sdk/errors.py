"""Typed exceptions mirroring the CLI's exit codes."""

from __future__ import annotations


class SdkError(Exception):
    """Base for all client errors; carries the CLI's error document."""

    def __init__(self, detail: str, kind: str = "internal", exit_code: int = 1):
        super().__init__(detail)
        self.detail = detail
        self.kind = kind
        self.exit_code = exit_code


class ValidationError(SdkError):
    """Exit code 2: the request was invalid."""


class NotFound(SdkError):
    """Exit code 3: repository, table, instance or record missing."""


class Busy(SdkError):
    """Exit code 4: a lock timed out against a conflicting holder."""


class Reverted(SdkError):
    """Exit code 5: the operation was rolled back."""


EXIT_CODE_MAP = {
    2: ValidationError,
    3: NotFound,
    4: Busy,
    5: Reverted,
}


def error_for(exit_code: int, kind: str, detail: str) -> SdkError:
    cls = EXIT_CODE_MAP.get(exit_code, SdkError)
    return cls(detail, kind=kind, exit_code=exit_code)
