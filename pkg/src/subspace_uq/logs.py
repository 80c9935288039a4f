import logging
import sys
from functools import partial
from logging.handlers import RotatingFileHandler
from pathlib import Path
from platform import platform
from types import TracebackType
from typing import override

import numpy as np
import scipy

from .__about__ import __title__, __version__, version_parsed
from .config import platform_dirs

LOGS_DIR = platform_dirs.user_log_path
MAIN_LOG_FILE_NAME = "main.log"

# Handlers added by the last `setup_application_logging` call
_installed_handlers: list[logging.Handler] = []


def log_basic_info(logger: logging.Logger) -> None:
    logger.info("Logging started")
    logger.info(f"{__title__}: {__version__}")
    logger.info(f"numpy {np.__version__}, scipy {scipy.__version__}")
    logger.info(platform())


def handle_uncaught_exceptions(
    exc_type: type[BaseException],
    exc_value: BaseException,
    exc_traceback: TracebackType | None,
    logger: logging.Logger,
) -> None:
    """Handler for uncaught exceptions that will write to the logs"""
    if issubclass(exc_type, KeyboardInterrupt):
        # call the default excepthook saved at __excepthook__
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return
    logger.critical(
        "Uncaught exception:", exc_info=(exc_type, exc_value, exc_traceback)
    )


class RedactHomeDirFormatter(logging.Formatter):
    """
    Redact home directory from log messages. Output directories and config
    paths often contain the user's name.
    """

    @override
    def format(self, record: logging.LogRecord) -> str:
        unredacted = super().format(record)
        return unredacted.replace(str(Path.home()), "<HOME>")


def setup_application_logging(*, verbose: bool = False) -> None:
    """
    Configure the root logger for a CLI run. `verbose` lowers the stream level
    to DEBUG. Calling it again replaces the handlers from the previous call.
    """
    if version_parsed.is_devrelease or verbose:
        file_logging_level = logging.DEBUG
        stream_logging_level = logging.DEBUG
    elif version_parsed.is_prerelease:
        file_logging_level = logging.DEBUG
        stream_logging_level = logging.WARNING
    else:
        file_logging_level = logging.INFO
        stream_logging_level = logging.WARNING

    # Make sure logs dir exists
    LOGS_DIR.mkdir(exist_ok=True, parents=True)

    logger = logging.getLogger()

    # This is for the logger globally. Different handlers
    # attached to it have their own levels.
    logger.setLevel(logging.DEBUG)

    for handler in _installed_handlers:
        logger.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(stream_logging_level)

    file_handler = RotatingFileHandler(
        filename=LOGS_DIR / MAIN_LOG_FILE_NAME,
        mode="a",
        maxBytes=10 * 1024 * 1024,
        backupCount=2,
        encoding="UTF-8",
    )
    file_handler.setLevel(file_logging_level)

    stream_handler.setFormatter(
        logging.Formatter("%(name)s - %(levelname)s - %(message)s")
    )
    file_handler.setFormatter(
        RedactHomeDirFormatter(
            "%(asctime)s - %(process)d - %(threadName)s - %(name)s - "
            "%(levelname)s - %(lineno)d - %(message)s"
        )
    )

    logger.addHandler(stream_handler)
    logger.addHandler(file_handler)
    _installed_handlers.extend((stream_handler, file_handler))

    # Setup handling of uncaught exceptions
    sys.excepthook = partial(handle_uncaught_exceptions, logger=logger)

    log_basic_info(logger=logger)
