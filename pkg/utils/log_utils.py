import logging
import sys

from config import LOG_FILE, LOG_FORMAT, LOG_LEVEL

logger = logging.getLogger("treeflow")


def setup_logging(level: str = LOG_LEVEL, log_file: str = LOG_FILE):
    """Configure file logging for a run, with warnings echoed to stderr."""
    logging.basicConfig(
        filename=log_file,
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        force=True,
    )
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logging.getLogger().addHandler(console)


def log_print(*args, **kwargs):
    """Log a status line and echo it to stderr (stdout carries table output)."""
    message = " ".join(str(arg) for arg in args)
    logger.info(message)
    kwargs.setdefault("file", sys.stderr)
    print(*args, **kwargs)
