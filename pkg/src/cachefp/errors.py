"""Exception types shared across the toolkit.

Every error carries a stable machine-readable ``code`` so callers (and the
CLI's JSON error stream) can dispatch on it without parsing messages.
"""

from __future__ import annotations


class ToolError(Exception):
    """Base class; ``code`` identifies the failure class."""

    code = "error"

    def __init__(self, message: str = ""):
        self.message = message
        super().__init__(f"{self.code}: {message}" if message else self.code)


class EmptyTraceError(ToolError):
    code = "empty-trace"


class FormatError(ToolError):
    code = "format-error"


class OutOfMemoryError(ToolError):
    code = "out-of-memory"


class UnsupportedTechniqueError(ToolError):
    code = "unsupported-technique"


class MalformedQueryError(ToolError):
    code = "malformed-query"


class InsufficientRecordsError(ToolError):
    code = "insufficient-records"


class InvalidSpecError(ToolError):
    code = "invalid-spec"


class InsufficientSpikesError(ToolError):
    code = "insufficient-spikes"


class FoldsMissingError(ToolError):
    code = "folds-missing"
