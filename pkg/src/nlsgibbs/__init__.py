"""Spectral simulation and sampling of the focusing NLS on a circle with thermal noise."""

__version__ = "0.1.0"
