"""Numerical laboratory for the twisted conical Kähler-Ricci flow on a radial model."""

__version__ = "1.0.0"
