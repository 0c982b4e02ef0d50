"""Console entry point for the ``ddsmpc`` command."""

from __future__ import annotations

import logging
import sys
from collections.abc import Sequence

from ddsmpc.cli import (
    app_error_handler,
    build_parser,
    dispatch,
    unhandled_exception_handler,
)
from ddsmpc.cli.context import start_run
from ddsmpc.core import AppError, get_settings
from ddsmpc.core.logging import setup_logging

logger = logging.getLogger(__name__)


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, set up logging and run one subcommand; returns the exit code."""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging((args.log_level or settings.log_level).upper())
    run_id = start_run()
    logger.info(
        "command_started command=%s environment=%s run_id=%s",
        args.command,
        settings.environment,
        run_id,
    )
    try:
        code = dispatch(args, settings)
    except AppError as e:
        return app_error_handler(e)
    except Exception as e:
        return unhandled_exception_handler(e)
    logger.info("command_finished command=%s exit_code=%d", args.command, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
