import logging
import sys
from pathlib import Path
from datetime import datetime

from src.config.settings import LOGGING


def setup_logger(level="INFO", log_file=None, to_file=True):
    """
    Set up logging configuration.

    Args:
        level (str): Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file (str, optional): Path to log file. If None and ``to_file`` is set,
            a timestamped file is created in the configured log directory.
        to_file (bool): Whether to add a file handler at all.

    Returns:
        logging.Logger: The configured root logger.
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)

    if to_file and log_file is None:
        log_dir = Path(LOGGING["directory"])
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = log_dir / f"bsvie_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    handlers = [logging.StreamHandler(sys.stdout)]
    if to_file and log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )

    logging.info(f"Logging initialized at level {level}")
    if to_file:
        logging.info(f"Log file: {log_file}")

    return logging.getLogger()


class SolverLogger:
    """Logger that tags every message with the numerical backend producing it."""

    def __init__(self, component_name, tag):
        """
        Initialize the tagged logger.

        Args:
            component_name (str): Dotted logger name suffix, e.g. ``pde.type1``.
            tag (str): Backend tag printed in front of each message, e.g. ``fd``.
        """
        self.logger = logging.getLogger(f"src.{component_name}")
        self.tag = tag

    def debug(self, message, *args, **kwargs):
        self.logger.debug(f"[{self.tag}] {message}", *args, **kwargs)

    def info(self, message, *args, **kwargs):
        self.logger.info(f"[{self.tag}] {message}", *args, **kwargs)

    def warning(self, message, *args, **kwargs):
        self.logger.warning(f"[{self.tag}] {message}", *args, **kwargs)

    def error(self, message, *args, **kwargs):
        self.logger.error(f"[{self.tag}] {message}", *args, **kwargs)
