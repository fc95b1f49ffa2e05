"""Optical flow on evolving sphere-like surfaces."""

__version__ = "0.1.0"
