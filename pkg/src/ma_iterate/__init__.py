"""Normalised Monge-Ampère iteration on convex bodies, semi-discrete transport backend."""

from .convex_body import ConvexBody, build_body, regular_polygon
from .errors import MAIterateError, ValidationError
from .iteration import IterationConfig, IterationTrace, run
from .potential import EvaluationGrid, MaxAffinePotential
from .profile import Coupling, Profile

__all__ = ["ConvexBody", "Coupling", "EvaluationGrid", "IterationConfig", "IterationTrace",
           "MAIterateError", "MaxAffinePotential", "Profile", "ValidationError", "build_body",
           "regular_polygon", "run"]
