import logging
import logging.config
from contextvars import ContextVar

run_id_contextvar: ContextVar[str] = ContextVar("run_id", default="-")


def get_run_id() -> str:
    """Get the current run_id from context."""
    return run_id_contextvar.get()


class RunIDFilter(logging.Filter):
    """Add run_id to log records."""

    def filter(self, record: logging.LogRecord) -> bool:
        """Inject run_id if not present."""
        if not hasattr(record, "run_id"):
            record.run_id = run_id_contextvar.get()
        return True


def setup_logging(log_level: str = "INFO") -> None:
    """Configure structured logging with run correlation."""
    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "filters": {"run_id_filter": {"()": RunIDFilter}},
        "formatters": {
            "default": {
                "format": (
                    "%(asctime)s %(levelname)s %(name)s "
                    "run_id=%(run_id)s %(message)s"
                )
            }
        },
        "handlers": {
            "default": {
                "level": log_level,
                "class": "logging.StreamHandler",
                "stream": "ext://sys.stderr",
                "formatter": "default",
                "filters": ["run_id_filter"],
            }
        },
        "loggers": {
            "": {
                "handlers": ["default"],
                "level": log_level,
                "propagate": True,
            }
        },
    }

    logging.config.dictConfig(logging_config)
