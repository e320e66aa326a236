"""Numerical laboratory for locally constrained inverse curvature flow of capillary hypersurfaces."""

__version__ = "0.1.0"
