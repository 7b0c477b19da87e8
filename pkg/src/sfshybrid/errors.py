"""Exception hierarchy shared across the package.

Validation and file-format problems map to CLI exit code 1, numerical
degeneracies to exit code 2.
"""


class SfsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SfsError):
    """Bad input: shape mismatch, out-of-range value, unknown config key."""


class FormatError(SfsError):
    """Malformed file content. Carries a byte offset or line number."""

    def __init__(self, message, *, offset=None, line=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class DegenerateDirectionError(SfsError):
    """A direction vector has (near-)zero norm and cannot be normalized."""


class DegenerateNormalError(SfsError):
    """A per-pixel normal update or combination collapsed to (near-)zero."""


class DegenerateGeometryError(SfsError):
    """A normal field is rank-deficient; the mirror least squares is singular."""


class DivergenceError(SfsError):
    """Training produced a non-finite error. Carries the record so far."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
