"""Perceptual audio quality measurement with cognitive salience gating."""

__version__ = "0.1.0"
