"""Custom exception classes for error handling and exit-code mapping."""

from __future__ import annotations

from typing import Any


class AppError(Exception):
    """Base application error.

    Attributes:
        message: Human-readable error message.
        code: Stable machine-readable code (snake_case).
        exit_code: Process exit code the CLI returns for this error.
        details: Optional structured details (safe for logging/debug).
    """

    code: str = "internal_error"
    exit_code: int = 1

    def __init__(
        self,
        message: str,
        *,
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.details = details


class ValidationError(AppError):
    """Invalid input/validation error."""

    code = "validation_error"
    exit_code = 2


class ConfigError(ValidationError):
    """Scenario configuration could not be parsed or validated."""

    code = "config_error"


class NotFoundError(AppError):
    """Referenced file or preset does not exist."""

    code = "not_found"
    exit_code = 2


class PersistencyOfExcitationError(AppError):
    """Recorded data is not persistently exciting of the required order."""

    code = "persistency_of_excitation"
    exit_code = 3

    def __init__(
        self,
        message: str | None = None,
        *,
        required_order: int,
        rank: int | None = None,
        required_rank: int | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        self.required_order = required_order
        self.rank = rank
        self.required_rank = required_rank
        if message is None:
            message = (
                f"data is not persistently exciting of order {required_order}"
                + (
                    f" (rank {rank} < {required_rank})"
                    if rank is not None and required_rank is not None
                    else ""
                )
            )
        merged = {"required_order": required_order, "rank": rank}
        merged.update(details or {})
        super().__init__(message, details=merged)


class RetryExhaustedError(PersistencyOfExcitationError):
    """Data collection kept failing the excitation check."""

    code = "retries_exhausted"


class InfeasibleSystemError(AppError):
    """A linear system expected to be consistent has a non-negligible residual."""

    code = "inconsistent_system"
    exit_code = 3

    def __init__(
        self,
        message: str = "linear system is inconsistent",
        *,
        residual: float | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        self.residual = residual
        super().__init__(message, details=details)


class SolverError(AppError):
    """Conic solve did not finish with an optimal status."""

    code = "solver_error"
    exit_code = 4

    def __init__(
        self,
        message: str = "conic solver did not reach optimality",
        *,
        report: Any = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        self.report = report
        super().__init__(message, details=details)
