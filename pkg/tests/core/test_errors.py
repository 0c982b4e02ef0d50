"""Tests for custom error classes."""

from ddsmpc.core.errors import (
    AppError,
    ConfigError,
    InfeasibleSystemError,
    NotFoundError,
    PersistencyOfExcitationError,
    RetryExhaustedError,
    SolverError,
    ValidationError,
)


def test_validation_error():
    exc = ValidationError("Invalid input")
    assert exc.exit_code == 2
    assert exc.code == "validation_error"
    assert exc.message == "Invalid input"


def test_config_error_is_validation_error():
    exc = ConfigError("bad toml", details={"path": "x.toml"})
    assert isinstance(exc, ValidationError)
    assert exc.code == "config_error"
    assert exc.details == {"path": "x.toml"}


def test_not_found_error():
    exc = NotFoundError("missing")
    assert exc.exit_code == 2
    assert exc.code == "not_found"


def test_persistency_error_names_required_order():
    """Test the default message carries order and ranks."""
    exc = PersistencyOfExcitationError(required_order=26, rank=20, required_rank=52)
    assert exc.exit_code == 3
    assert "order 26" in exc.message
    assert "rank 20 < 52" in exc.message
    assert exc.details["required_order"] == 26


def test_retry_exhausted_is_persistency_error():
    exc = RetryExhaustedError(required_order=6, details={"attempts": 5})
    assert isinstance(exc, PersistencyOfExcitationError)
    assert exc.code == "retries_exhausted"
    assert exc.details["attempts"] == 5


def test_infeasible_system_error_keeps_residual():
    exc = InfeasibleSystemError(residual=0.5)
    assert exc.exit_code == 3
    assert exc.residual == 0.5


def test_solver_error_keeps_report():
    exc = SolverError(report={"status": "primal_infeasible"})
    assert exc.exit_code == 4
    assert exc.report["status"] == "primal_infeasible"


def test_app_error_base():
    exc = AppError("Custom error")
    assert exc.exit_code == 1
    assert exc.code == "internal_error"
    assert exc.message == "Custom error"
