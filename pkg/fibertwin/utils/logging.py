"""Logging configuration module using loguru."""

import sys
from pathlib import Path
from typing import Any, Optional

from loguru import logger

from fibertwin.config import config

FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}"


def setup_logging(level: Optional[str] = None, log_dir: Optional[Path] = None) -> None:
    """Configure loguru logging for the command line tools.

    Reports go to stdout, so the console handler writes to stderr.

    Args:
        level: Console level, defaults to ``config.LOG_LEVEL``.
        log_dir: Directory for the run log files. No files are written when omitted.
    """
    console_level = level or config.LOG_LEVEL

    # Remove default handler
    logger.remove()

    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
        "<level>{message}</level>",
        level=console_level,
        colorize=True,
        backtrace=True,
        diagnose=False,
    )

    if log_dir is not None:
        logs_dir = Path(log_dir)
        logs_dir.mkdir(parents=True, exist_ok=True)

        logger.add(
            logs_dir / "fibertwin.log",
            format=FILE_FORMAT,
            level="DEBUG",
            rotation="10 MB",
            retention="7 days",
            backtrace=True,
            diagnose=False,
        )

        logger.add(
            logs_dir / "errors.log",
            format=FILE_FORMAT,
            level="ERROR",
            rotation="5 MB",
            retention="30 days",
            backtrace=True,
            diagnose=False,
        )

        # JSON lines for post-run inspection of stage parameters
        logger.add(
            logs_dir / "structured.log",
            format="{message}",
            level="INFO",
            serialize=True,
            rotation="20 MB",
            retention="7 days",
        )

    logger.debug(f"Logging configured with level: {console_level}")


def get_logger(name: str) -> Any:
    """Get a logger bound to a module name.

    The name lands in ``extra`` so structured records can be filtered per stage.

    Args:
        name: Logger name, typically __name__ of the calling module.

    Returns:
        Bound loguru logger sharing the configured handlers.
    """
    return logger.bind(name=name)
