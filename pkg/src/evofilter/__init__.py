"""Evolutionary discovery of state-estimation programs."""

__version__ = "0.1.0"
