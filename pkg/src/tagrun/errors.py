"""Exception hierarchy.

Every error carries a stable ``error_class`` string that the CLI emits in
JSON mode, so scripted callers can branch on failures without parsing
human-readable messages.
"""

from __future__ import annotations


class TagrunError(Exception):
    """Base class for all domain errors (CLI exit code 1)."""

    error_class = "error"

    def payload(self) -> dict:
        """Extra JSON fields for CLI error output."""
        return {}


class UsageError(TagrunError):
    """Command line could not be understood (CLI exit code 2)."""

    error_class = "usage"


class QueryError(TagrunError):
    error_class = "invalid-query"


class NotFoundError(TagrunError):
    error_class = "not-found"


class AmbiguousError(TagrunError):
    """A selector matched more than one artifact."""

    error_class = "ambiguous"

    def __init__(self, message: str, candidates: list[str]):
        super().__init__(message)
        self.candidates = candidates

    def payload(self) -> dict:
        return {"candidates": self.candidates}


class RepoError(TagrunError):
    error_class = "repo-error"


class CollisionError(TagrunError):
    error_class = "alias-collision"


class MetaError(TagrunError):
    error_class = "meta-invalid"


class ConfirmationRequired(TagrunError):
    error_class = "confirmation-required"


class LockTimeoutError(TagrunError):
    error_class = "lock-timeout"


class CycleError(TagrunError):
    error_class = "dependency-cycle"

    def __init__(self, message: str, chain: list[str]):
        super().__init__(message)
        self.chain = chain

    def payload(self) -> dict:
        return {"chain": self.chain}


class SubprocessError(TagrunError):
    error_class = "subprocess-failed"

    def __init__(self, message: str, return_code: int = 1,
                 stdout: str = "", stderr: str = ""):
        super().__init__(message)
        self.return_code = return_code
        self.stdout = stdout
        self.stderr = stderr

    def payload(self) -> dict:
        return {
            "subprocess_return_code": self.return_code,
            "stdout": self.stdout[-2000:],
            "stderr": self.stderr[-2000:],
        }


class HookProtocolError(TagrunError):
    error_class = "hook-protocol"


class HookFailure(TagrunError):
    """A hook reported a recipe-level failure via its JSON reply.

    Hooks may name their own failure taxonomy (e.g. a download recipe
    reporting ``checksum-mismatch``); it is surfaced verbatim.
    """

    error_class = "hook-failed"

    def __init__(self, message: str, error_class: str | None = None,
                 stderr: str = ""):
        super().__init__(message)
        if error_class:
            self.error_class = error_class
        self.stderr = stderr

    def payload(self) -> dict:
        return {"stderr": self.stderr[-2000:]}


class VersionError(TagrunError):
    error_class = "version-unparseable"


class VersionGateError(TagrunError):
    error_class = "version-gate"


class PortabilityError(TagrunError):
    error_class = "not-portable"


class DownloadError(TagrunError):
    error_class = "download-failed"


class ChecksumError(TagrunError):
    error_class = "checksum-mismatch"

    def __init__(self, message: str, expected: str, actual: str):
        super().__init__(message)
        self.expected = expected
        self.actual = actual

    def payload(self) -> dict:
        return {"expected": self.expected, "actual": self.actual}


class InputError(TagrunError):
    error_class = "invalid-input"


class MetricError(TagrunError):
    error_class = "invalid-metric"
