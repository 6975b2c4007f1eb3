"""Env-gated trace output routed through the ``voxblend`` logger."""

from __future__ import annotations

import logging
import os
import sys
from typing import Callable

TRACE_ENV = "VOXBLEND_TRACE"

logger = logging.getLogger("voxblend")

_handler: logging.Handler | None = None


def trace_enabled() -> bool:
    flag = os.environ.get(TRACE_ENV)
    return bool(flag) and flag not in {"0", "false", "False"}


def _ensure_handler() -> None:
    global _handler
    if _handler is not None:
        return
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(_handler)
    if logger.level == logging.NOTSET or logger.level > logging.DEBUG:
        logger.setLevel(logging.DEBUG)


def make_trace(component: str) -> Callable[[str], None]:
    """Return a ``_trace(msg)`` function tagged with ``[component]``."""
    child = logger.getChild(component)

    def _trace(msg: str) -> None:
        if not trace_enabled():
            return
        _ensure_handler()
        child.debug(f"[{component}] {msg}")

    return _trace
