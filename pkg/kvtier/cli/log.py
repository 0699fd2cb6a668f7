"""
Run Logging
Package logger setup and timed, structured logging of units of work.
"""
import logging
import sys
import time
from contextlib import contextmanager
from typing import Iterator

logger = logging.getLogger("kvtier")

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def configure_logging(quiet: bool = False, verbose: bool = False) -> None:
    """
    Attach one stderr handler to the `kvtier` logger.

    quiet keeps warnings and errors only; verbose adds per-level search
    progress and self-audits.
    """
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(handler)
    else:
        # sys.stderr may have been replaced since the first call
        logger.handlers[0].setStream(sys.stderr)
    logger.propagate = False


@contextmanager
def log_run(label: str, **context) -> Iterator[dict]:
    """
    Time a unit of work (simulation, search, sweep point) and log it.

    Logs `{label: ..., **context, status, duration_ms}` at INFO on success and
    at ERROR when the block raises. The yielded dict may be extended with
    results to include in the log line.
    """
    start_time = time.perf_counter()
    extra: dict = {}
    status = "ok"
    try:
        yield extra
    except Exception as exc:
        status = type(exc).__name__
        raise
    finally:
        log_data = {
            "run": label,
            **context,
            **extra,
            "status": status,
            "duration_ms": int((time.perf_counter() - start_time) * 1000),
        }
        if status == "ok":
            logger.info(f"Run: {log_data}")
        else:
            logger.error(f"Run: {log_data}")
