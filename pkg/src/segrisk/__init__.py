"""Segmentation losses, metrics and slide-level risk classification."""

__version__ = "0.1.0"
