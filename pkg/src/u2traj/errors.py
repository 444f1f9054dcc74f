"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration/parameter
problems exit 2, I/O and parse problems exit 3, numeric failures exit 4.
"""


class U2TrajError(Exception):
    """Base class for all package errors."""


class ParameterError(U2TrajError, ValueError):
    """An argument violates an operation precondition."""


class DimensionError(U2TrajError, ValueError):
    """Array arguments have incompatible shapes."""


class StepRangeError(U2TrajError, ValueError):
    """A denoising step index is outside the valid range."""


class DomainError(U2TrajError, ValueError):
    """A numeric argument is outside the mathematical domain of an operation."""


class ConfigError(U2TrajError, ValueError):
    """A run configuration is missing, inconsistent, or invalid."""


class NumericError(U2TrajError, ArithmeticError):
    """A computation produced a non-finite value."""


class DegenerateCorrelationError(U2TrajError, ValueError):
    """Rank correlation is undefined because one input has zero rank variance."""


class ParseError(U2TrajError, ValueError):
    """A file does not conform to its declared format.

    ``line`` is the 1-based offending line for text formats, or None for
    binary containers.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatVersionError(ParseError):
    """The file declares an unsupported format version (or wrong magic)."""


class TruncatedFileError(ParseError):
    """The file ends before the declared record count."""


class MalformedRecordError(ParseError):
    """A record line cannot be parsed or violates field constraints."""
