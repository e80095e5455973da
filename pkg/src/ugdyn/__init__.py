"""Analog dynamics for 2-Lin-k (Unique Games) instances."""

__version__ = "0.1.0"
