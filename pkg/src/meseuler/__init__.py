"""Mimetic spectral element model of the rotating compressible Euler equations."""

__version__ = "0.1.0"
