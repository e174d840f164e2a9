"""Bimanual trajectory synthesis from a few segmented source demonstrations."""

__version__ = "0.1.0"
