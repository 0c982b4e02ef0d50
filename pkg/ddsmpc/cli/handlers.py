"""Exception handlers: map errors to a JSON envelope on stderr and an exit code."""

from __future__ import annotations

import json
import logging
import sys
from typing import Any, TextIO

from ddsmpc.core.errors import AppError
from ddsmpc.core.logging import get_run_id

logger = logging.getLogger(__name__)


def get_error_response(
    *,
    message: str,
    code: str,
    exit_code: int,
    run_id: str,
    details: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Create standard error envelope."""
    error: dict[str, Any] = {
        "code": code,
        "message": message,
        "exit_code": exit_code,
        "run_id": run_id,
    }
    if details:
        error["details"] = details
    return {"error": error}


def _emit(envelope: dict[str, Any], stream: TextIO | None) -> None:
    stream = stream or sys.stderr
    stream.write(json.dumps(envelope, sort_keys=True, default=str) + "\n")
    stream.flush()


def app_error_handler(exc: AppError, stream: TextIO | None = None) -> int:
    """Handle AppError exceptions (expected errors)."""
    run_id = get_run_id()
    # Expected failures (bad config, data not exciting) are warnings, not errors.
    logger.warning(
        "application_error code=%s exit_code=%s",
        exc.code,
        exc.exit_code,
        extra={"error_code": exc.code},
    )
    _emit(
        get_error_response(
            message=exc.message,
            code=exc.code,
            exit_code=exc.exit_code,
            run_id=run_id,
            details=exc.details,
        ),
        stream,
    )
    return exc.exit_code


def unhandled_exception_handler(
    exc: BaseException, stream: TextIO | None = None
) -> int:
    """Handle unhandled exceptions (unexpected errors)."""
    logger.exception(
        "unhandled_exception exc_type=%s", type(exc).__name__, exc_info=exc
    )
    _emit(
        get_error_response(
            message="Unexpected error occurred.",
            code="internal_error",
            exit_code=1,
            run_id=get_run_id(),
        ),
        stream,
    )
    return 1
