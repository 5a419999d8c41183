"""Synthetic TEM cavity dataset forge, self-regulation filter and evaluation suite."""

__version__ = "0.1.0"
