from __future__ import annotations
import logging
import os
from typing import Optional

# .env support
try:
    from dotenv import load_dotenv
    load_dotenv()
except Exception:
    pass

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(level: Optional[str] = None) -> int:
    name = (level or os.getenv("MOME_LOG_LEVEL") or "INFO").upper()
    value = logging.getLevelName(name)
    return value if isinstance(value, int) else logging.INFO


def setup_logging(level: Optional[str] = None) -> int:
    """Configure the root logger for a CLI run; later calls only adjust the level."""
    resolved = resolve_level(level)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=resolved, format=LOG_FORMAT)
    root.setLevel(resolved)
    return resolved
