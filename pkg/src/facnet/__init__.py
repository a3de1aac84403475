"""Frequency-aware convolution over a small numpy neural-network kernel."""

__version__ = "0.1.0"
