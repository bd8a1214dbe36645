"""Continuous-state branching processes with proportional immigration."""

__version__ = "0.1.0"
