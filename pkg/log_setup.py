"""
Logging bootstrap for the UWB ranging toolkit.
"""
import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

from config_loader import get_config_value

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger once with a rotating file handler and a stream handler.

    Safe to call repeatedly; handlers are only added when missing.

    Args:
        level: Log level name (defaults to LOG_LEVEL from .config)
        log_file: Log file path (defaults to LOG_FILE from .config)

    Returns:
        The root logger
    """
    level_name = str(level or get_config_value('LOG_LEVEL', 'INFO')).upper()
    log_level = getattr(logging, level_name, logging.INFO)
    log_file = log_file or get_config_value('LOG_FILE', 'uwb_ranging.log', str)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    formatter = logging.Formatter(LOG_FORMAT)

    # Check if FileHandler exists for our log file
    has_file_handler = False
    for h in root_logger.handlers:
        if isinstance(h, logging.FileHandler):
            if os.path.abspath(h.baseFilename) == os.path.abspath(log_file):
                has_file_handler = True
                break

    if not has_file_handler:
        # 10MB limit, 5 backups
        file_handler = RotatingFileHandler(log_file, maxBytes=10*1024*1024, backupCount=5)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    has_stream_handler = any(
        isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
        for h in root_logger.handlers
    )
    if not has_stream_handler:
        stream_handler = logging.StreamHandler()
        stream_handler.setFormatter(formatter)
        root_logger.addHandler(stream_handler)

    return root_logger
