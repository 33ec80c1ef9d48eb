"""Sequence-recognition confidence calibration toolkit."""

__version__ = "0.1.0"
