"""Logging utilities with run context and array-safe payloads."""
import logging
import sys
import uuid
from typing import Optional, Dict, Any

import numpy as np
import structlog

logger = structlog.get_logger()


def configure_logging(level: str = "INFO", renderer: str = "json") -> None:
    """
    Configure structlog for CLI runs.

    Args:
        level: Minimum log level name
        renderer: "json" for machine-readable lines, "console" for humans
    """
    final_renderer = (
        structlog.dev.ConsoleRenderer()
        if renderer == "console"
        else structlog.processors.JSONRenderer()
    )
    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.add_log_level,
            final_renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, level.upper(), logging.INFO)
        ),
        context_class=dict,
        # stdout is reserved for command output (reports, tables)
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def get_logger_with_context(
    run_id: Optional[str] = None,
    stage: Optional[str] = None,
    seed: Optional[int] = None,
    event_type: Optional[str] = None
) -> structlog.BoundLogger:
    """
    Get logger with run context fields.

    Args:
        run_id: Artifact directory name of the run
        stage: Pipeline stage name
        seed: Run seed
        event_type: Event type

    Returns:
        Bound logger with context
    """
    context: Dict[str, Any] = {"event_type": event_type or "unknown"}

    if run_id:
        context["run_id"] = run_id
    if stage:
        context["stage"] = stage
    if seed is not None:
        context["seed"] = seed

    context["event_id"] = str(uuid.uuid4())

    return logger.bind(**context)


def summarize_for_logging(data: Any, max_length: int = 200) -> Any:
    """
    Make data safe for JSON log lines.

    Numpy scalars become Python numbers, arrays are replaced by a shape summary,
    long strings are truncated.

    Args:
        data: Data to summarize
        max_length: Maximum length for strings

    Returns:
        Loggable data
    """
    if isinstance(data, np.ndarray):
        if data.size <= 6:
            return data.tolist()
        return f"<ndarray shape={data.shape} dtype={data.dtype}>"
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, str):
        if len(data) > max_length:
            return data[:max_length] + "..."
        return data
    if isinstance(data, dict):
        return {key: summarize_for_logging(value, max_length) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [summarize_for_logging(item, max_length) for item in data]
    return data


def log_event(
    event_type: str,
    run_id: Optional[str] = None,
    stage: Optional[str] = None,
    seed: Optional[int] = None,
    level: str = "info",
    **kwargs
):
    """
    Log event with run context.

    Args:
        event_type: Event type (required)
        run_id: Run identifier (optional)
        stage: Pipeline stage (optional)
        seed: Run seed (optional)
        level: Log level (info, warning, error, debug)
        **kwargs: Additional log fields
    """
    log = get_logger_with_context(
        run_id=run_id,
        stage=stage,
        seed=seed,
        event_type=event_type
    )

    log_method = getattr(log, level.lower(), log.info)
    log_method(event_type, **summarize_for_logging(kwargs))
