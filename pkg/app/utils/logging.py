"""
Loguru setup for the command-line tool and structured helpers for the events
that recur during a run: adversarial iterations, Bayes-error cells and
pipeline stages.
"""

import json
import logging
import sys
from typing import Any, Dict, Optional

from loguru import logger

TEXT_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{extra[module]}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
    "<level>{message}</level>"
)

# Libraries whose stdlib loggers or warnings should land in the same stream.
ROUTED_LOGGERS = ("py.warnings", "numpy", "scipy", "sklearn")


class InterceptHandler(logging.Handler):
    """Forward stdlib log records to loguru, tagged with the emitting logger's name."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        frame, depth = logging.currentframe(), 2
        while frame and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.bind(module=record.name).opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def _json_sink_formatter(record: Dict[str, Any]) -> str:
    extra = dict(record["extra"])
    entry = {
        "timestamp": record["time"].isoformat(),
        "level": record["level"].name,
        "message": record["message"],
        "module": extra.pop("module", record["module"]),
        "function": record["function"],
        "line": record["line"],
    }
    # Fields passed as extra={...} arrive nested one level down.
    entry.update(extra.pop("extra", {}))
    entry.update(extra)
    if record["exception"]:
        entry["exception"] = str(record["exception"])
    record["extra"]["serialized"] = json.dumps(entry, default=str)
    return "{extra[serialized]}\n"


def setup_logging(log_level: str = "INFO", json_format: bool = False) -> None:
    """
    Install a single stderr sink and route stdlib logging through loguru.
    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_format: Emit one JSON object per record instead of the coloured console format
    """
    logger.remove()
    logger.configure(extra={"module": "app"})
    if json_format:
        logger.add(sys.stderr, format=_json_sink_formatter, level=log_level.upper(), colorize=False)
    else:
        logger.add(sys.stderr, format=TEXT_FORMAT, level=log_level.upper(), colorize=True)

    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    for name in ROUTED_LOGGERS:
        std_logger = logging.getLogger(name)
        std_logger.handlers = [InterceptHandler()]
        std_logger.propagate = False
    logging.captureWarnings(True)


def get_logger(name: str) -> Any:
    """Logger bound to a module name (pass `__name__`)."""
    return logger.bind(module=name)


def log_iteration(log: Any) -> None:
    """One record per adversarial iteration, carrying every IterationLog field."""
    get_logger("app.core.adversarial").info(
        "Adversarial iteration finished",
        extra={
            "iteration": log.iteration,
            "acc_train": round(log.acc_train, 4),
            "acc_val": round(log.acc_val, 4),
            "acc_test": round(log.acc_test, 4),
            "mi_nats": round(log.mi_nats, 6),
            "distortion_m": round(log.distortion_m, 2),
            "seconds": round(log.seconds, 3),
        },
    )


def log_evaluation(
    mechanism: str,
    split: str,
    cells_per_side: int,
    obf_count: int,
    bayes_error: float,
    clamped: int = 0,
) -> None:
    """
    Log one Bayes-error cell. Estimates that needed clamping are warnings.
    Args:
        mechanism: Name of the evaluated mechanism (original, laplace, ours)
        split: Dataset split the hits were generated from
        cells_per_side: Grid resolution
        obf_count: Obfuscated hits per original location
        bayes_error: Estimated B(X|Z)
        clamped: Number of hits that fell outside the region
    """
    eval_logger = get_logger("app.core.evaluation")
    details = {
        "mechanism": mechanism,
        "split": split,
        "cells_per_side": cells_per_side,
        "obf_count": obf_count,
        "bayes_error": round(bayes_error, 4),
    }
    if clamped:
        eval_logger.warning("Bayes error estimated with clamped hits", extra={**details, "clamped_hits": clamped})
    else:
        eval_logger.info("Bayes error estimated", extra=details)


def log_stage(stage: str, duration_ms: float, error: Optional[str] = None, **fields: Any) -> None:
    """
    Log the end of a pipeline stage (data, game, evaluation, probe).
    A stage that raised is logged as a warning with its message.
    """
    stage_logger = get_logger("app.commands.experiment")
    details = {"stage": stage, "duration_ms": round(duration_ms, 1), **fields}
    if error:
        stage_logger.warning("Stage failed", extra={**details, "error_message": error})
    else:
        stage_logger.info("Stage completed", extra=details)
