"""
Error hierarchy.

Every error raised on purpose by the package derives from LocPrivError and
carries the process exit code the CLI should return for it.
"""


class LocPrivError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1


class ContractError(LocPrivError, ValueError):
    """A precondition of an operation was violated (shapes, ranges, empty input)."""

    exit_code = 1


class ConfigError(LocPrivError):
    """Invalid or unreadable configuration."""

    exit_code = 3


class DataError(LocPrivError):
    """Input data is unreadable or insufficient for the requested selection."""

    exit_code = 4


class NonConvergenceError(LocPrivError):
    """The adversarial game stopped at its iteration budget without converging."""

    exit_code = 2

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations
