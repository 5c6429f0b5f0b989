"""Numerical construction of triply periodic minimal surfaces and their
polysynthetic twins."""

__version__ = "0.1.0"
