# stderr logging for the CLI: a human log on "mgmkit" and the plain metrics log on "mgmkit.metrics"

from __future__ import annotations
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, TextIO, Union

HUMAN_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
METRICS_LOGGER = "mgmkit.metrics"

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def configure_logging(verbosity: int = 1, stream: Optional[TextIO] = None, metrics_stream: Optional[TextIO] = None) -> None:
    """
    Install the two stderr handlers, replacing any installed by an earlier call.

    verbosity 0 is warnings only, 1 adds stage boundaries, 2 and up adds per-step detail.
    The metrics log always goes out at INFO and never carries a timestamp.
    """
    stream = stream or sys.stderr
    root = logging.getLogger("mgmkit")
    root.handlers.clear()
    handler = logging.StreamHandler(stream)
    handler.setFormatter(logging.Formatter(HUMAN_FORMAT))
    root.addHandler(handler)
    root.setLevel(_LEVELS.get(verbosity, logging.DEBUG))

    metrics = logging.getLogger(METRICS_LOGGER)
    metrics.handlers.clear()
    metrics_handler = logging.StreamHandler(metrics_stream or stream)
    metrics_handler.setFormatter(logging.Formatter("%(message)s"))
    metrics.addHandler(metrics_handler)
    metrics.setLevel(logging.INFO)
    metrics.propagate = False


@contextmanager
def metrics_to_file(path: Union[str, Path]) -> Iterator[None]:
    """Also append metric lines to `path` while the block runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    metrics = logging.getLogger(METRICS_LOGGER)
    metrics.addHandler(handler)
    metrics.setLevel(logging.INFO)
    try:
        yield
    finally:
        metrics.removeHandler(handler)
        handler.close()
