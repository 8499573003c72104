"""Interference and generalization in temporal-difference learning: instruments and experiments."""

__version__ = "0.1.0"
