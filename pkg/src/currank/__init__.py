"""Dual-curriculum training toolkit for context-aware document ranking."""

__version__ = "0.1.0"
