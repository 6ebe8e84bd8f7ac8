"""Taxonomy-grounded factual consistency detection for summaries."""
from __future__ import annotations

from .taxonomy import CANONICAL_ORDER, ErrorType, GoldLabel, Verdict, convert_label

__version__ = "0.1.0"

__all__ = ["CANONICAL_ORDER", "ErrorType", "GoldLabel", "Verdict", "convert_label", "__version__"]
