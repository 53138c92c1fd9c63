"""Harmonic-map heat flow from the plane into hyperbolic 3-space, asymptotic
to twisted ideal polygons."""

__version__ = "0.1.0"
