"""
Logging system for DrowsyWatch

Every logger writes to stderr (stdout carries command output) and, when the
log directory is writable, to a daily file.
"""
import logging
import os
from datetime import datetime

from colorama import Fore, Style, just_fix_windows_console

just_fix_windows_console()

CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'

_LEVEL_COLORS = {
    'DEBUG': Style.DIM,
    'INFO': Fore.GREEN,
    'WARNING': Fore.YELLOW,
    'ERROR': Fore.RED,
    'CRITICAL': Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Console formatter that colours the level name"""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        color = _LEVEL_COLORS.get(record.levelname)
        if not color:
            return message
        return message.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)


def get_log_dir() -> str:
    """Log directory: $DDS_LOG_DIR or ~/.drowsywatch/logs"""
    override = os.environ.get('DDS_LOG_DIR')
    if override:
        return override
    return os.path.join(os.path.expanduser('~'), '.drowsywatch', 'logs')


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(ColorFormatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
    return handler


def _file_handler():
    """Daily log file handler, or None when the directory is not writable"""
    log_dir = get_log_dir()
    stamp = datetime.now().strftime('%Y%m%d')
    try:
        os.makedirs(log_dir, exist_ok=True)
        handler = logging.FileHandler(os.path.join(log_dir, f"drowsywatch_{stamp}.log"), encoding='utf-8')
    except OSError:
        return None
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    return handler


def setup_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    (Re)configure a named logger

    Args:
        name: Logger name, usually the component ('DrivingDetector')
        level: Console threshold; the file always gets DEBUG

    Returns:
        The configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    logger.handlers.clear()

    logger.addHandler(_console_handler(level))
    file_handler = _file_handler()
    if file_handler is not None:
        logger.addHandler(file_handler)
    return logger


def get_logger(name: str) -> logging.Logger:
    """Get a logger, configuring it on first use"""
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    return setup_logger(name)


def set_console_level(level: int):
    """Adjust the console threshold of every logger created so far"""
    for logger in logging.Logger.manager.loggerDict.values():
        if not isinstance(logger, logging.Logger):
            continue
        for handler in logger.handlers:
            # FileHandler subclasses StreamHandler; leave it at DEBUG
            if type(handler) is logging.StreamHandler:
                handler.setLevel(level)
