import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal


LoggingMode = Literal["normal", "verbose", "quiet"]

LOGGER_NAME = "cdap"


def setup_logging(*, mode: LoggingMode = "normal", log_dir: str | Path = "logs") -> logging.Logger:
    """Set up logging configuration.

    Parameters
    ----------
    mode : Literal["normal", "verbose", "quiet"], optional
        Console logging mode to use, by default "normal"
    log_dir : str | Path, optional
        Directory receiving the DEBUG log file, by default "logs"

    Returns
    -------
    logging.Logger
        Configured logger instance.
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(exist_ok=True, parents=True)

    timestamp = datetime.now(tz=timezone.utc).strftime("%Y%m%d_%H%M%S")
    log_file = log_dir / f"cdap_{timestamp}.log"

    # Define log levels
    file_level = logging.DEBUG
    console_level = {
        "quiet": logging.ERROR,
        "normal": logging.INFO,
        "verbose": logging.DEBUG,
    }[mode]

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)
    # Repeated CLI invocations in one process must not stack handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(file_level)
    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)

    file_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    console_format = logging.Formatter("%(levelname)s: %(message)s")
    file_handler.setFormatter(file_format)
    console_handler.setFormatter(console_format)

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    return logger


def get_logger(name: str = LOGGER_NAME) -> logging.Logger:
    """Get a logger instance under the package logger.

    Parameters
    ----------
    name : str, optional
        Module name, by default the package logger itself

    Returns
    -------
    logging.Logger
        Logger instance.
    """
    if name == LOGGER_NAME or name.startswith(f"{LOGGER_NAME}."):
        return logging.getLogger(name)
    return logging.getLogger(f"{LOGGER_NAME}.{name}")


def progress_enabled() -> bool:
    """Progress bars follow the console handler: hidden when it is quieter than INFO."""
    logger = logging.getLogger(LOGGER_NAME)
    console = [h for h in logger.handlers if type(h) is logging.StreamHandler]
    if not console:
        return False
    return console[0].level <= logging.INFO
