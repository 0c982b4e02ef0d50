import uuid

from ddsmpc.core.logging import get_run_id, run_id_contextvar


def start_run() -> str:
    """Assign a fresh run id to this invocation; logs and error envelopes carry it."""
    run_id = str(uuid.uuid4())
    run_id_contextvar.set(run_id)
    return run_id


__all__ = ["start_run", "get_run_id"]
