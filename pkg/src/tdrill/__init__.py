"""Timeout bug drill-down: classify, localize, plan a fix, predict a value, validate."""

from __future__ import annotations

__version__ = "0.1.0"
