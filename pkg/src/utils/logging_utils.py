# src/utils/logging_utils.py
import logging
import os

_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def get_logger(name: str, level: str = None) -> logging.Logger:
    """Module logger with a single stream handler, level from DGAN_LOG_LEVEL unless given."""
    log = logging.getLogger(name)
    log.setLevel((level or os.getenv("DGAN_LOG_LEVEL", "INFO")).upper())
    if not log.handlers:
        ch = logging.StreamHandler()
        ch.setFormatter(logging.Formatter(_FORMAT))
        log.addHandler(ch)
        log.propagate = False
    return log


def set_level(level: str):
    """Re-level every DesignerGAN logger created so far (used by the CLI after settings load)."""
    for name in list(logging.root.manager.loggerDict):
        log = logging.getLogger(name)
        if any(isinstance(h, logging.StreamHandler) and getattr(h.formatter, "_fmt", None) == _FORMAT for h in log.handlers):
            log.setLevel(level.upper())
