"""Anisotropic alpha-Gauss curvature flow of convex graphs."""

__version__ = "0.1.0"
