from ddsmpc.cli.commands import build_parser, dispatch
from ddsmpc.cli.handlers import app_error_handler, unhandled_exception_handler

__all__ = [
    "build_parser",
    "dispatch",
    "app_error_handler",
    "unhandled_exception_handler",
]
