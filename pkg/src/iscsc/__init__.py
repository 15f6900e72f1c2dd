"""Robust secure ISAC beamforming with semantic extraction ratios."""

__version__ = "0.1.0"
