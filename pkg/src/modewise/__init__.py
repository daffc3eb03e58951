"""Failure-mode discovery and mode-aware RUL prediction for degradation data."""

__version__ = "0.1.0"
