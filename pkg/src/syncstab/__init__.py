"""Numerical stability machinery for synchronized mean-field oscillator systems."""

__version__ = "0.1.0"
