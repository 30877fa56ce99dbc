"""Adaptive conditional neural processes for extreme-event load forecasting."""

__version__ = "0.1.0"
