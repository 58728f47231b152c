"""Logging setup for the command-line interface."""

import logging

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "agca_multigrid"


def configure_logging(verbose: bool = False, console: Console | None = None) -> logging.Logger:
    """Route the package loggers through a RichHandler.

    Args:
        verbose: Log at DEBUG instead of INFO.
        console: Console to write to; defaults to stderr.

    Returns:
        The package logger.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=verbose,
        rich_tracebacks=verbose,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger
