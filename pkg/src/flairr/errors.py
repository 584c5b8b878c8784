"""Exception types shared across the package.

The CLI maps these onto stable exit codes: config problems exit 1, data
problems exit 2, backend/transport problems exit 3, and parse failures that
survive all retries exit 4.
"""

from __future__ import annotations


class FlairrError(Exception):
    """Base class for all package errors."""


class ConfigError(FlairrError):
    """Invalid or incomplete configuration (flags, config files, env)."""


class DataError(FlairrError):
    """Dataset ingestion or validation failure (CSV shape, bad cells)."""


class TemplateError(FlairrError):
    """Unknown template id or an unresolved placeholder in rendered text."""


class BackendError(FlairrError):
    """Completion transport failure: HTTP errors, exhausted or ambiguous scripts."""


class ReplyParseError(FlairrError):
    """A model reply violated the expected output grammar.

    Retryable: the orchestrator re-asks with a corrective suffix. ``offending``
    carries the substring that triggered the failure, for diagnostics.
    """

    def __init__(self, message: str, offending: str = ""):
        super().__init__(message)
        self.offending = offending


class ParseRetryError(FlairrError):
    """A reply could not be parsed even after all configured retries."""

    def __init__(self, message: str, last_error: ReplyParseError | None = None):
        super().__init__(message)
        self.last_error = last_error
