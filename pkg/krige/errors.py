"""
Exception hierarchy for the kriging library.

Every error raised on purpose by this package derives from ``KrigeError``
and carries the process exit code the command line maps it to. Library
code raises; only ``app.main`` turns an exception into an exit status.
"""

from __future__ import annotations


class KrigeError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1


class UsageError(KrigeError):
    """Bad flags, bad config keys, or missing input paths."""

    exit_code = 2


class InvalidArgumentError(KrigeError, ValueError):
    """A precondition of a library operation was violated."""

    exit_code = 2


class InputFormatError(KrigeError):
    """A CSV or record file could not be parsed."""

    exit_code = 3

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = path
        if line is not None:
            where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(KrigeError):
    """A numerical computation failed."""

    exit_code = 4


class NotPositiveDefiniteError(NumericalError):
    """A matrix expected to be symmetric positive definite is not."""


class RankDeficientBasisError(NumericalError):
    """The basis matrix S does not have full column rank."""


class DegenerateKnotsError(NumericalError):
    """Two knots coincide (distance below 1e-12)."""


class NoSolutionError(NumericalError):
    """A root-finder could not bracket a solution."""


class NumericalInconsistencyError(NumericalError):
    """A quantity that is nonnegative in exact arithmetic came out negative."""


class CollinearCovariatesError(NumericalError):
    """The covariate design matrix is rank deficient."""

    def __init__(self, message: str, columns: list[str] | None = None):
        self.columns = list(columns or [])
        if self.columns:
            message = f"{message}: {', '.join(self.columns)}"
        super().__init__(message)


class NoModelError(NumericalError):
    """Every candidate in a model selection failed to fit."""


class CapabilityError(KrigeError):
    """The request exceeds the desk-scale caps of this implementation."""

    exit_code = 5
