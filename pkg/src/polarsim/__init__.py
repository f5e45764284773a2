"""Geometric opinion dynamics on the unit sphere: simulation and polarization checks."""

__version__ = "0.1.0"
