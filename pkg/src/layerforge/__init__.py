"""Two-layer document synthesis, separation training and evaluation."""

__version__ = "0.1.0"
