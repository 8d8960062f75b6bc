"""Corpus-supervised speech segmentation for speech translation."""

__version__ = "0.1.0"
