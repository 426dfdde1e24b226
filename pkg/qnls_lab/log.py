"""
Logging setup for the command line front-end.
Level names are coloured with colorama so warnings stand out in sweeps.
"""

import logging
import sys

from colorama import Fore, Style, init

LEVEL_COLOURS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.MAGENTA + Style.BRIGHT,
}


class ColourFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        colour = LEVEL_COLOURS.get(record.levelno, "")
        message = super().format(record)
        return message.replace(
            record.levelname, f"{colour}{record.levelname}{Style.RESET_ALL}", 1
        )


def configure_logging(verbosity: int = 0) -> None:
    """
    Install a coloured stderr handler on the package logger.
    Args:
        verbosity (int): -1 quiet, 0 info, 1 or more debug.
    """
    # Initialize colorama for cross-platform colored terminal output
    init()

    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        ColourFormatter("%(asctime)s %(levelname)s %(name)s: %(message)s", "%H:%M:%S")
    )
    package_logger = logging.getLogger("qnls_lab")
    package_logger.handlers.clear()
    package_logger.addHandler(handler)
    package_logger.setLevel(level)
    package_logger.propagate = False
