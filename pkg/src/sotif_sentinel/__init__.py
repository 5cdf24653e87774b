"""Perception-uncertainty-aware risk monitoring and planning toolkit."""

__version__ = "0.1.0"
