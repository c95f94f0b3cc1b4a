import logging
import sys
from typing import Optional

from app.core.config import settings

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once; later calls only adjust the level"""
    level = (level or settings.LOG_LEVEL).upper()
    root = logging.getLogger()
    if not any(getattr(h, "_risce", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._risce = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(level)
