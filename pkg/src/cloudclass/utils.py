import hashlib
import logging

from rich.logging import RichHandler

PACKAGE_LOGGER = "cloudclass"


def configure_logging(level: str = "WARNING") -> logging.Logger:
    """
    Installs a rich handler on the package logger (once) and sets its level.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(show_time=False, show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level.upper())
    return logger


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
