"""Tests for logger module."""
import pytest
from unittest.mock import patch
import os

from dcmr.logger import Logger, LogLevel, get_logger


@pytest.fixture
def logger():
    """Fresh logger reading the (patched) environment."""
    Logger.reset()
    return Logger()


@pytest.mark.unit
class TestLogLevel:
    """Tests for LogLevel enum."""

    def test_log_levels_order(self):
        """Test log levels are ordered correctly."""
        assert LogLevel.DEBUG < LogLevel.VERBOSE
        assert LogLevel.VERBOSE < LogLevel.INFO
        assert LogLevel.INFO < LogLevel.WARNING
        assert LogLevel.WARNING < LogLevel.ERROR

    def test_log_level_values(self):
        """Test log level numeric values."""
        assert LogLevel.DEBUG == 0
        assert LogLevel.VERBOSE == 1
        assert LogLevel.INFO == 2
        assert LogLevel.WARNING == 3
        assert LogLevel.ERROR == 4


@pytest.mark.unit
class TestLoggerInstance:
    """Tests for the logger singleton."""

    def test_get_instance_singleton(self):
        """Test get_instance returns singleton."""
        assert Logger.get_instance() is Logger.get_instance()

    def test_get_logger(self):
        """Test get_logger returns the singleton."""
        assert get_logger() is Logger.get_instance()

    def test_reset_forgets_instance(self):
        """Test reset drops the cached instance."""
        first = get_logger()
        Logger.reset()
        assert get_logger() is not first


@pytest.mark.unit
class TestGetLogLevel:
    """Tests for get_log_level method."""

    @pytest.mark.parametrize("name,level", [
        ("DEBUG", LogLevel.DEBUG),
        ("VERBOSE", LogLevel.VERBOSE),
        ("INFO", LogLevel.INFO),
        ("WARNING", LogLevel.WARNING),
        ("ERROR", LogLevel.ERROR),
    ])
    def test_level_from_environment(self, logger, name, level):
        """Test each level name is read from DCMR_LOG_LEVEL."""
        with patch.dict(os.environ, {'DCMR_LOG_LEVEL': name}):
            assert logger.get_log_level() == level

    def test_get_log_level_default(self, logger):
        """Test default log level (INFO)."""
        assert logger.get_log_level() == LogLevel.INFO

    @patch.dict(os.environ, {'DCMR_LOG_LEVEL': 'invalid'})
    def test_get_log_level_invalid(self, logger):
        """Test invalid log level defaults to INFO."""
        assert logger.get_log_level() == LogLevel.INFO

    @patch.dict(os.environ, {'DCMR_LOG_LEVEL': 'debug'})
    def test_get_log_level_lowercase(self, logger):
        """Test lowercase log level."""
        assert logger.get_log_level() == LogLevel.DEBUG

    def test_get_log_level_cached(self, logger):
        """Test log level is cached."""
        with patch.dict(os.environ, {'DCMR_LOG_LEVEL': 'DEBUG'}):
            level1 = logger.get_log_level()
        with patch.dict(os.environ, {'DCMR_LOG_LEVEL': 'ERROR'}):
            level2 = logger.get_log_level()
        assert level1 == level2 == LogLevel.DEBUG

    def test_level_comes_from_config(self, logger, mocker):
        """Test the logger asks Config for the level name."""
        lookup = mocker.patch("dcmr.logger.Config.get_log_level", return_value="ERROR")
        assert logger.get_log_level() == LogLevel.ERROR
        lookup.assert_called_once_with()

    def test_set_log_level(self, logger):
        """Test explicit override."""
        logger.set_log_level(LogLevel.WARNING)
        assert logger.get_log_level() == LogLevel.WARNING


@pytest.mark.unit
class TestLog:
    """Tests for log output."""

    def test_log_goes_to_stderr(self, logger, capsys):
        """Test messages are written to stderr, never stdout."""
        logger.info("epoch %d done", 3)
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "INFO: epoch 3 done" in captured.err

    def test_log_filtered_by_level(self, logger, capsys):
        """Test messages below the level are dropped."""
        logger.verbose("step detail")
        logger.warning("retrying")
        err = capsys.readouterr().err
        assert "step detail" not in err
        assert "WARNING: retrying" in err

    def test_log_to_file(self, logger, tmp_path, capsys):
        """Test DCMR_LOG_FILE receives a copy of every line."""
        log_file = tmp_path / "logs" / "dcmr.log"
        with patch.dict(os.environ, {'DCMR_LOG_FILE': str(log_file), 'DCMR_LOG_LEVEL': 'DEBUG'}):
            logger.debug("first")
            logger.error("second")
        content = log_file.read_text()
        assert "DEBUG: first" in content
        assert "ERROR: second" in content

    def test_no_log_file_by_default(self, logger):
        """Test no file without DCMR_LOG_FILE."""
        assert logger.get_log_file() is None

    def test_log_format_error_handled(self, logger, capsys):
        """Test format errors fall back to the raw message."""
        logger.info("Message with %s", "too", "many")
        assert "Message with %s" in capsys.readouterr().err

    def test_timestamp_prefix(self, logger, capsys):
        """Test lines start with a bracketed timestamp."""
        logger.info("hello")
        line = capsys.readouterr().err.strip()
        assert line.startswith("[")
        assert "] INFO: hello" in line
