import logging
import os
import sys

LOG_ENV_VAR = "PANCAD_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def resolve_level(value: str | None) -> int:
    """Level name from PANCAD_LOG, WARNING when unset or unrecognized."""
    name = (value or "WARNING").strip().upper()
    if name not in LOG_LEVELS:
        name = "WARNING"
    return getattr(logging, name)


def configure_logging(level: str | None = None) -> int:
    """Route pancad logs to stderr at the level named by level or PANCAD_LOG."""
    resolved = resolve_level(level if level is not None else os.environ.get(LOG_ENV_VAR))
    logging.basicConfig(level=resolved, format=LOG_FORMAT, stream=sys.stderr, force=True)
    return resolved
