"""
Error hierarchy for the factorial platform.

Every error is a ``ValueError`` so callers that only know about bad input keep
working. Each class carries the process exit code used by the command-line
surface and the gRPC status code used by the design service.
"""

import grpc


class FactorialError(ValueError):
    """Base class for all platform errors."""

    exit_code = 1
    status_code = grpc.StatusCode.INTERNAL


class InputError(FactorialError):
    """Malformed or out-of-range input."""

    exit_code = 2
    status_code = grpc.StatusCode.INVALID_ARGUMENT


class ParseError(InputError):
    """A data file could not be parsed."""

    def __init__(self, message: str, row: int = None, line: int = None):
        if row is not None:
            where = f"row {row}"
            if line is not None:
                where += f" (line {line})"
            message = f"{where}: {message}"
        super().__init__(message)
        self.row = row
        self.line = line


class DesignError(InputError):
    """The data do not fit the factorial design (e.g. an empty treatment group)."""


class DegenerateInferenceError(FactorialError):
    """Inference is statistically degenerate (zero or undefined variance)."""

    exit_code = 3
    status_code = grpc.StatusCode.FAILED_PRECONDITION


class VarianceUndefinedError(DegenerateInferenceError):
    """A sample variance is undefined because a group has a single unit."""


class EstimandUndefinedError(DegenerateInferenceError):
    """A non-linear estimand involves the log or logit of 0 or 1."""


class InfeasibleError(FactorialError):
    """An allocation, population or enumeration request cannot be satisfied."""

    exit_code = 4
    status_code = grpc.StatusCode.OUT_OF_RANGE


class NegativeVarianceWarning(UserWarning):
    """A plug-in variance evaluated below zero and was clamped."""


_BY_STATUS = {
    grpc.StatusCode.INVALID_ARGUMENT: InputError,
    grpc.StatusCode.FAILED_PRECONDITION: DegenerateInferenceError,
    grpc.StatusCode.OUT_OF_RANGE: InfeasibleError,
}


def error_for_status(code: grpc.StatusCode, details: str) -> FactorialError:
    """Rebuild a platform error from a gRPC status returned by the design service."""
    return _BY_STATUS.get(code, FactorialError)(details)
