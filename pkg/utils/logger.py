import logging
import os
import warnings
from datetime import datetime

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CONSOLE_FORMAT = '%(levelname)s: %(message)s'
QUIET_LOGGERS = ("sqlalchemy.engine", "matplotlib")


def _format_warning(message, category, filename, lineno, line=None):
    return f"{category.__name__}: {message}"


def _route_warnings():
    # Tail probabilities underflow/overflow in numpy before the log-space fallback kicks in.
    warnings.filterwarnings("ignore", category=RuntimeWarning, module="numpy")
    warnings.filterwarnings("ignore", category=RuntimeWarning, message=".*overflow encountered.*")
    logging.captureWarnings(True)
    warnings.formatwarning = _format_warning


def log_file_path(log_root='logs', now=None):
    """logs/YYYY-MM/MM-DD/DD-HH00/HHMM.log; the directory is created."""
    now = now or datetime.now()
    log_dir = os.path.join(log_root, now.strftime('%Y-%m'), now.strftime('%m-%d'), now.strftime('%d-%H00'))
    os.makedirs(log_dir, exist_ok=True)
    return os.path.join(log_dir, f'{now.strftime("%H%M")}.log')


def _handler(handler, level, fmt):
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def setup_logger(level=logging.DEBUG, log_root='logs'):
    """Root logger writing DEBUG to a timestamped file and INFO (or `level`, if higher) to the console."""
    _route_warnings()

    root = logging.getLogger()
    root.setLevel(level)
    if root.hasHandlers():
        root.handlers.clear()
    root.addHandler(_handler(logging.FileHandler(log_file_path(log_root)), logging.DEBUG, FILE_FORMAT))
    root.addHandler(_handler(logging.StreamHandler(), max(logging.INFO, level), CONSOLE_FORMAT))

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
    return root
