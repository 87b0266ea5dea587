"""Pixel-based SAC with pluggable self-supervised losses and evolved loss weights."""

__version__ = "0.1.0"
