"""Shared pytest fixtures."""

import logging

import pytest

from agca_multigrid.logs import PACKAGE_LOGGER


@pytest.fixture(autouse=True)
def _restore_package_logger():
    """Undo configure_logging() side effects so CLI tests stay order-independent."""
    logger = logging.getLogger(PACKAGE_LOGGER)
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)
    logger.propagate = propagate
