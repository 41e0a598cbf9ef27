"""
Logging for the P6LoWPAN codec and simulator

Codec and simulator events go through structlog; octet strings bound to an
event (frames, addresses, FLEX fields) are rendered as spaced hex. The
standard library root logger writes to the same sinks.
"""

import logging
import sys
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Iterator, List, MutableMapping, Optional

import structlog

from src.utils.config import LoggingConfig, get_config

_LINE_FORMATS = {
    "json": '{"timestamp":"%(asctime)s","level":"%(levelname)s","name":"%(name)s","message":"%(message)s"}',
    "text": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}


def hex_octets(_logger: Any, _method: str, event_dict: MutableMapping[str, Any]) -> MutableMapping[str, Any]:
    """structlog processor: bytes values become hex strings"""
    for key, value in event_dict.items():
        if isinstance(value, (bytes, bytearray)):
            event_dict[key] = bytes(value).hex(" ")
    return event_dict


def _level_number(name: str) -> int:
    value = logging.getLevelName(name.upper())
    return value if isinstance(value, int) else logging.WARNING


def setup_logging(settings: Optional[LoggingConfig] = None, *, level: Optional[str] = None) -> None:
    """
    Configure structlog and the root logger

    Args:
        settings: the `logging` section of the configuration (defaults if None)
        level: overrides settings.level, e.g. from --log-level
    """
    settings = settings or LoggingConfig()
    log_level = _level_number(level or settings.level)
    renderer = (
        structlog.processors.JSONRenderer()
        if settings.format == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            hex_octets,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )

    handlers: List[logging.Handler] = []
    if settings.console:
        handlers.append(logging.StreamHandler(sys.stderr))
    if settings.file:
        Path(settings.file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            RotatingFileHandler(
                settings.file,
                maxBytes=settings.max_bytes,
                backupCount=settings.backup_count,
                encoding="utf-8",
            )
        )
    formatter = logging.Formatter(_LINE_FORMATS.get(settings.format, _LINE_FORMATS["text"]))
    for handler in handlers:
        handler.setFormatter(formatter)
    logging.basicConfig(level=log_level, handlers=handlers or [logging.NullHandler()], force=True)


def get_logger(name: str) -> structlog.BoundLogger:
    return structlog.get_logger(name)


@contextmanager
def scenario_context(scenario: str, **fields: Any) -> Iterator[None]:
    """
    Bind a scenario name to every event logged inside the block

    Usage:
        with scenario_context("riot_to_contiki_stateful_multicast", seed=0):
            logger.info("frame_sent")
    """
    with structlog.contextvars.bound_contextvars(scenario=scenario, **fields):
        yield


setup_logging(get_config().lowpan.logging)
