"""Decoding reading goals from eye-movement scanpaths."""

__version__ = "0.1.0"
