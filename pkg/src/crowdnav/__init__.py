"""Crowd navigation simulator and RL environment with semantic human-assistance tasks."""

__version__ = "0.1.0"
