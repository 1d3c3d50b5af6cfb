"""Command-line front end (``influx``) and its helpers."""

from .compare import compare_curves
from .main import build_parser, main

__all__ = ["main", "build_parser", "compare_curves"]
