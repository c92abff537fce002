"""Chance-constrained multi-robot motion planning with cooperative localization."""

__version__ = "0.1.0"
