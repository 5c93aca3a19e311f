"""Obscured-fire segmentation from RGB video with IR-derived labels."""

__version__ = "0.1.0"
