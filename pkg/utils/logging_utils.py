# utils/logging_utils.py
"""
Logger setup driven by config.LOGGING
"""
import logging
from typing import Optional

import config

_CONFIGURED = False


def setup_logging(level: Optional[str] = None, force: bool = False) -> logging.Logger:
    """Configure the package root logger once from config.LOGGING"""
    global _CONFIGURED
    root = logging.getLogger('spiketrace')
    if _CONFIGURED and not force:
        return root

    for handler in list(root.handlers):
        root.removeHandler(handler)

    formatter = logging.Formatter(config.LOGGING['format'])
    if config.LOGGING.get('log_to_console', True):
        console = logging.StreamHandler()
        console.setFormatter(formatter)
        root.addHandler(console)
    if config.LOGGING.get('log_to_file', False):
        file_handler = logging.FileHandler(config.LOGGING['file'])
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.setLevel((level or config.LOGGING['level']).upper())
    root.propagate = False
    _CONFIGURED = True
    return root


def get_logger(name: str) -> logging.Logger:
    """Get a child logger under the spiketrace namespace"""
    if name.startswith('utils.'):
        name = name[len('utils.'):]
    return logging.getLogger(f'spiketrace.{name}')
