"""Exception types shared across the toolkit."""

from __future__ import annotations


class FidelError(Exception):
    """Base class for toolkit errors."""


class ValidationError(FidelError, ValueError):
    """A value violates a documented precondition."""


class DimensionError(ValidationError):
    """Tensor shapes do not agree."""


class ConfigurationError(ValidationError):
    """A configuration cannot be satisfied."""


class GridLookupError(ValidationError, LookupError):
    """A label or grid cell is outside the alphabet grid."""


class GridFormatError(ValidationError):
    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class GridValidationError(ValidationError):
    def __init__(self, violations: list[str]) -> None:
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class FormatError(FidelError):
    """Binary file is malformed; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
