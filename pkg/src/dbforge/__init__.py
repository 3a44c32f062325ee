"""Annotation-free bias discovery and mode-level distribution balancing on
synthetic biased classification data."""

__version__ = "0.1.0"
