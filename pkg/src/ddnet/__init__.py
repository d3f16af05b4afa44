"""Cartesian-polar dual-domain segmentation of optic disc and cup."""

__version__ = "0.1.0"
