"""Exception types shared across the package."""

from __future__ import annotations


class SrmtError(Exception):
    """Base class for all package errors."""


class DimensionError(SrmtError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(SrmtError):
    """An API precondition was violated by the caller."""


class ConfigError(SrmtError):
    """Invalid experiment or generator configuration.

    ``problems`` carries every individual validation failure so callers can
    report them all at once.
    """

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or [message]


class MapParseError(SrmtError):
    """Malformed map text; carries 1-based line and column of the offence."""

    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}" if col else f"line {line}: {message}")
        self.line = line
        self.col = col


class NumericError(SrmtError):
    """A kernel produced NaN or Inf, which is an error state."""


class TrainAbort(SrmtError):
    """Training stopped on a fatal numeric condition; diagnostics were dumped."""
