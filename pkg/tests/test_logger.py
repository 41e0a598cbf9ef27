"""
Tests for structured logging setup
"""

import logging
from logging.handlers import RotatingFileHandler

import structlog

from src.utils.config import LoggingConfig
from src.utils.logger import hex_octets, scenario_context, setup_logging


class TestHexOctets:
    def test_bytes_become_hex(self):
        event = hex_octets(None, "debug", {"event": "frame_sent", "frame": b"\x7e\x33", "size": 2})
        assert event == {"event": "frame_sent", "frame": "7e 33", "size": 2}

    def test_bytearray(self):
        assert hex_octets(None, "info", {"flex": bytearray(b"\xff\xc0")})["flex"] == "ff c0"


class TestSetupLogging:
    def teardown_method(self):
        setup_logging()

    def test_level_override(self):
        setup_logging(LoggingConfig(level="ERROR"), level="debug")
        assert logging.getLogger().level == logging.DEBUG

    def test_unknown_level_falls_back(self):
        setup_logging(LoggingConfig(level="chatty"))
        assert logging.getLogger().level == logging.WARNING

    def test_rotating_file(self, tmp_path):
        path = tmp_path / "logs" / "p6lowpan.log"
        setup_logging(LoggingConfig(file=str(path), max_bytes=2048, backup_count=2, console=False))
        (handler,) = logging.getLogger().handlers
        assert isinstance(handler, RotatingFileHandler)
        assert handler.maxBytes == 2048
        assert path.parent.is_dir()


class TestScenarioContext:
    def test_binds_and_unbinds(self):
        with scenario_context("contiki_to_riot", seed=3):
            assert structlog.contextvars.get_contextvars() == {"scenario": "contiki_to_riot", "seed": 3}
        assert "scenario" not in structlog.contextvars.get_contextvars()
