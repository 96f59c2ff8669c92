"""Subharmonic (time-crystalline) dynamics of periodically driven XXZ central-spin models."""

__version__ = "0.1.0"
