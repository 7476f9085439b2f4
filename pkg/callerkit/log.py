"""Provides the structured logging setup shared by every module."""

import logging
import sys

import structlog


def configure_logging(level: str = "warning", json: bool = False) -> None:
    """Configures structlog for the current process.

    Log records are written to stderr so that stdout stays reserved for the
    reports printed by the command line interface. Calling this more than
    once reconfigures the level and renderer.

    Args:
        level: The minimum level to emit (debug, info, warning, error)
        json: Whether to render records as JSON instead of console lines
    """

    renderer = (
        structlog.processors.JSONRenderer()
        if json
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level.upper())
        ),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def get_logger(system: str) -> structlog.stdlib.BoundLogger:
    """Returns a logger bound to the given subsystem name.

    Args:
        system: The dotted module name, e.g. `callerkit.graph`

    Returns:
        A bound structlog logger.
    """
    return structlog.get_logger(system=system)
