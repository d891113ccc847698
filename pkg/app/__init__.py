from __future__ import annotations

from .cli import build_parser, main

__all__ = ["build_parser", "main"]
