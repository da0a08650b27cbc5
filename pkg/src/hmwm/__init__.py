"""Hybrid multiplicative watermarking laboratory."""

__version__ = "0.1.0"
