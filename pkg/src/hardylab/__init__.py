"""Numerical verification of two-sided heat kernel bounds and Hardy-type inequalities."""

from .geometry import Ball, Box, ConvexPolygon, Ellipse, WeightParams, make_ball, make_domain
from .discretize import PotentialSpec, assemble, build_grid
from .spectral import generalized_min_quotient, principal_eigenpair

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Box",
    "ConvexPolygon",
    "Ellipse",
    "PotentialSpec",
    "WeightParams",
    "assemble",
    "build_grid",
    "generalized_min_quotient",
    "make_ball",
    "make_domain",
    "principal_eigenpair",
]
