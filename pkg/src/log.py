"""
Diagnostic logging setup.

Verbosity comes from the MESHLOC_LOG environment variable (off, info or
trace). Everything goes to standard error.
"""

import logging
import os
import sys
from typing import Optional

from .errors import ConfigurationError

TRACE = 5
logging.addLevelName(TRACE, "TRACE")

LEVELS = {
    "off": logging.CRITICAL + 10,
    "info": logging.INFO,
    "trace": TRACE,
}

PACKAGE_LOGGER = "src"


def configure_logging(level: Optional[str] = None) -> int:
    """
    Configure the package logger.

    Args:
        level: One of 'off', 'info', 'trace'. Falls back to MESHLOC_LOG,
            then to 'off'.

    Returns:
        The numeric logging level that was applied
    """
    name = (level or os.environ.get("MESHLOC_LOG") or "off").strip().lower()
    if name not in LEVELS:
        raise ConfigurationError(
            f"Unknown log level '{name}' (expected one of: {', '.join(LEVELS)})"
        )

    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(LEVELS[name])
    logger.propagate = False
    return LEVELS[name]
