from __future__ import annotations


class GlsrError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GlsrError, ValueError):
    pass


class ConfigError(GlsrError, ValueError):
    pass


class StructureError(GlsrError, ValueError):
    pass


class NumericError(GlsrError, ArithmeticError):
    pass


class UsageError(GlsrError, RuntimeError):
    pass


class FormatError(GlsrError, ValueError):
    """Malformed file content. `offset` is the byte position when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
