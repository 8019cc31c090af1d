"""Screening private companies for private-equity investment."""

__version__ = "0.1.0"
