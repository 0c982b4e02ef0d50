from ddsmpc.core.config import Settings, get_settings
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
from ddsmpc.core.logging import setup_logging

__all__ = [
    "Settings",
    "get_settings",
    "setup_logging",
    "AppError",
    "ValidationError",
    "ConfigError",
    "NotFoundError",
    "PersistencyOfExcitationError",
    "RetryExhaustedError",
    "InfeasibleSystemError",
    "SolverError",
]
