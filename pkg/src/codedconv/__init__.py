"""Coded distributed convolution: splitting, MDS/LT coding, latency model, simulator and runtime."""

__version__ = "0.1.0"
