"""Unit tests for logging helpers."""
import json

import numpy as np
import structlog
from structlog.testing import capture_logs

from apps.hydride_gan.utils.logger_utils import (
    configure_logging,
    get_logger_with_context,
    log_event,
    summarize_for_logging,
)


class TestSummarizeForLogging:
    """Test cases for summarize_for_logging."""

    def test_small_array_becomes_list(self):
        """Test that small arrays are logged by value."""
        assert summarize_for_logging(np.array([1.0, 2.0])) == [1.0, 2.0]

    def test_large_array_becomes_summary(self):
        """Test that large arrays are replaced by their shape."""
        assert summarize_for_logging(np.zeros((4, 18, 3))) == (
            "<ndarray shape=(4, 18, 3) dtype=float64>"
        )

    def test_numpy_scalars(self):
        """Test that numpy scalars become Python numbers."""
        value = summarize_for_logging(np.float64(0.25))
        assert value == 0.25
        assert type(value) is float
        assert type(summarize_for_logging(np.int64(3))) is int

    def test_long_string_truncated(self):
        """Test string truncation."""
        assert summarize_for_logging("x" * 300, max_length=10) == "x" * 10 + "..."

    def test_nested_structures(self):
        """Test that dicts and lists are summarized recursively."""
        data = {"losses": [np.float32(0.5)], "meta": {"shape": np.array([4, 18, 3])}}
        assert summarize_for_logging(data) == {"losses": [0.5], "meta": {"shape": [4, 18, 3]}}
        json.dumps(summarize_for_logging(data))


class TestContextLogging:
    """Test cases for get_logger_with_context and log_event."""

    def test_log_event_fields(self):
        """Test that run context and payload reach the log entry."""
        with capture_logs() as logs:
            log_event("stage_completed", run_id="crystalgan/seed_0", stage="encode", seed=0,
                      samples=np.int64(4))
        assert len(logs) == 1
        entry = logs[0]
        assert entry["event"] == "stage_completed"
        assert entry["event_type"] == "stage_completed"
        assert entry["run_id"] == "crystalgan/seed_0"
        assert entry["stage"] == "encode"
        assert entry["seed"] == 0
        assert entry["samples"] == 4
        assert entry["log_level"] == "info"

    def test_log_event_level(self):
        """Test that the requested level is used."""
        with capture_logs() as logs:
            log_event("stage_failed", level="error", error="boom")
        assert logs[0]["log_level"] == "error"
        assert "run_id" not in logs[0]

    def test_context_defaults(self):
        """Test that missing context fields are omitted and an event id is added."""
        with capture_logs() as logs:
            get_logger_with_context(seed=3).info("epoch_logged")
        assert logs[0]["event_type"] == "unknown"
        assert logs[0]["seed"] == 3
        assert "stage" not in logs[0]
        assert len(logs[0]["event_id"]) == 36


class TestConfigureLogging:
    """Test cases for configure_logging."""

    def test_json_lines_on_stderr(self, capsys):
        """Test that JSON log lines go to stderr and stdout stays clean."""
        try:
            configure_logging("INFO", "json")
            structlog.get_logger().info("run_started", seed=1)
            structlog.get_logger().debug("hidden_event")
            captured = capsys.readouterr()
            assert captured.out == ""
            lines = captured.err.strip().splitlines()
            assert len(lines) == 1
            payload = json.loads(lines[0])
            assert payload["event"] == "run_started"
            assert payload["level"] == "info"
            assert payload["seed"] == 1
        finally:
            structlog.reset_defaults()
