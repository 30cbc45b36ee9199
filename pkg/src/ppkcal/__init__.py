"""Projected-kernel and penalized projected-kernel calibration of computer models."""
__version__ = "0.1.0"
