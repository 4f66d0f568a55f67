"""
Logging configuration for gdesk.

Sets up rotating file handler and console output.
"""

import os
import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path


def get_log_directory() -> Path:
    """Get the log directory path."""
    log_home = os.environ.get("XDG_STATE_HOME", os.path.expanduser("~/.local/log"))
    return Path(log_home) / "gdesk"


def setup_logging(level: int = logging.INFO, console: bool = True,
                  log_dir: Path | None = None) -> Path:
    """
    Configure application logging.

    Args:
        level: Logging level (default: INFO)
        console: Whether to also log to stderr
        log_dir: Override of the log directory

    Returns:
        Path of the log file
    """
    log_dir = log_dir or get_log_directory()
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / "gdesk.log"

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    # Max 1MB per file, keep 7 backup files
    file_handler = RotatingFileHandler(log_file, maxBytes=1_000_000, backupCount=7)
    file_handler.setFormatter(formatter)
    file_handler.setLevel(level)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in list(root_logger.handlers):
        if getattr(handler, "_gdesk", False):
            root_logger.removeHandler(handler)
            handler.close()
    file_handler._gdesk = True
    root_logger.addHandler(file_handler)

    if console:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        console_handler._gdesk = True
        root_logger.addHandler(console_handler)

    # Reduce noise from third-party libraries
    logging.getLogger("sympy").setLevel(logging.WARNING)

    logging.info(f"Logging initialized. Log file: {log_file}")
    return log_file
