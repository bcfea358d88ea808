"""structlog configuration for the despeckling toolkit.

Records are JSON lines on stderr by default, or one human-readable line per
event when `configure_structlog(testing=True)`. Standard fields sit at the top
level; everything else a call site or the bound context adds goes under
`extra`. numpy scalars are unwrapped and arrays are summarized so that tensors
passed to a logger never flood the output.
"""

import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Any
from uuid import uuid4

import numpy as np
import structlog
from structlog.types import EventDict, WrappedLogger

# ============================================================================
# Configuration & Constants
# ============================================================================


class LogKeys(str, Enum):
    RUN_ID = "run_id"
    CONTEXT = "context"
    TIMESTAMP = "timestamp"
    LOGGER = "logger"
    MESSAGE = "message"
    LEVEL = "level"
    EXTRA = "extra"


STANDARD_FIELDS = frozenset(
    key.value for key in (LogKeys.TIMESTAMP, LogKeys.LOGGER, LogKeys.MESSAGE, LogKeys.CONTEXT, LogKeys.LEVEL)
)


@dataclass(frozen=True)
class LogDefaults:
    context: str = "default"
    run_id: str = "unknown"
    log_level: str = "INFO"
    max_value_length: int = 50
    run_id_length: int = 8
    float_digits: int = 6


DEFAULTS = LogDefaults()


# ============================================================================
# Run context
# ============================================================================


def get_run_id() -> str:
    return str(structlog.contextvars.get_contextvars().get(LogKeys.RUN_ID.value, DEFAULTS.run_id))


def new_run_id() -> str:
    """Bind a fresh short run ID; every record until the context is cleared carries it."""
    run_id = uuid4().hex[: DEFAULTS.run_id_length]
    structlog.contextvars.bind_contextvars(**{LogKeys.RUN_ID.value: run_id})
    return run_id


def bind_context_vars(**kwargs: Any) -> None:
    structlog.contextvars.bind_contextvars(**kwargs)


def get_context_vars() -> dict[str, Any]:
    return structlog.contextvars.get_contextvars()


def clear_context_fields() -> None:
    structlog.contextvars.clear_contextvars()


# ============================================================================
# Processors
# ============================================================================


def summarize_value(value: Any) -> Any:
    """JSON-friendly form of a field: numpy scalars unwrapped, arrays reduced to shape, dtype and range."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return [summarize_value(item) for item in value]
    if not isinstance(value, np.ndarray):
        return value
    summary: dict[str, Any] = {"shape": list(value.shape), "dtype": str(value.dtype)}
    if value.size == 0 or not np.issubdtype(value.dtype, np.number) or np.iscomplexobj(value):
        return summary
    finite = value[np.isfinite(value)]
    if finite.size:
        summary["min"] = float(finite.min())
        summary["max"] = float(finite.max())
    if finite.size != value.size:
        summary["non_finite"] = int(value.size - finite.size)
    return summary


def _restructure(_: WrappedLogger, __: str, event_dict: EventDict) -> EventDict:
    event_dict[LogKeys.MESSAGE.value] = event_dict.pop("event", "")
    event_dict.setdefault(LogKeys.CONTEXT.value, DEFAULTS.context)

    extra = {key: summarize_value(event_dict.pop(key)) for key in list(event_dict) if key not in STANDARD_FIELDS}
    # The run ID stays out of records emitted before any run started.
    if extra.get(LogKeys.RUN_ID.value) == DEFAULTS.run_id:
        del extra[LogKeys.RUN_ID.value]
    if extra:
        event_dict[LogKeys.EXTRA.value] = extra
    return event_dict


class HumanReadableFormatter:
    """One terminal line per record: HH:MM:SS [LEVEL] module: message [key=value, ...] [run:xxxxxxxx]"""

    def __init__(self, defaults: LogDefaults = DEFAULTS):
        self.defaults = defaults

    def __call__(self, _: WrappedLogger, __: str, event_dict: EventDict) -> str:
        extra = dict(event_dict.get(LogKeys.EXTRA.value, {}))
        run_id = str(extra.pop(LogKeys.RUN_ID.value, ""))

        line = (
            f"{self._clock(event_dict.get(LogKeys.TIMESTAMP.value, ''))} "
            f"[{str(event_dict.get(LogKeys.LEVEL.value, 'info')).upper()}] "
            f"{self._module(event_dict.get(LogKeys.LOGGER.value, ''))}: "
            f"{event_dict.get(LogKeys.MESSAGE.value, '')}"
        )
        if extra:
            line += " [" + ", ".join(f"{key}={self._field(value)}" for key, value in extra.items()) + "]"
        if run_id:
            line += f" [run:{run_id[: self.defaults.run_id_length]}]"
        return line

    def _field(self, value: Any) -> str:
        text = f"{value:.{self.defaults.float_digits}g}" if isinstance(value, float) else str(value)
        limit = self.defaults.max_value_length
        return text if len(text) <= limit else f"{text[: limit - 3]}..."

    @staticmethod
    def _clock(timestamp: str) -> str:
        if not timestamp:
            return ""
        try:
            return datetime.fromisoformat(timestamp.replace("Z", "+00:00")).strftime("%H:%M:%S")
        except ValueError:
            return ""

    @staticmethod
    def _module(logger_name: str) -> str:
        # "src.training" -> "training"
        return logger_name.removeprefix("src.") if logger_name.startswith("src.") else logger_name


# ============================================================================
# Setup
# ============================================================================


def _level_from_env() -> int:
    level = logging.getLevelName(os.environ.get("LOGGING_LEVEL", DEFAULTS.log_level).upper())
    return level if isinstance(level, int) else logging.INFO


def configure_structlog(testing: bool = False) -> None:
    """Route structlog through stdlib logging on stderr; JSON lines unless `testing`."""
    level = _level_from_env()
    # stdout belongs to the CLI's JSON reports.
    logging.basicConfig(format="%(message)s", level=level, stream=sys.stderr)
    logging.getLogger().setLevel(level)

    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.contextvars.merge_contextvars,
            _restructure,
            structlog.processors.TimeStamper(fmt="iso"),
            HumanReadableFormatter() if testing else structlog.processors.JSONRenderer(),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.make_filtering_bound_logger(level),
        cache_logger_on_first_use=True,
    )


def get_logger(name: str = "") -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name or __name__)  # type: ignore[no-any-return]
