"""Numerical Finsler geometry engine and boundary-distance inverse workbench."""

from . import cli, distances, domains, elastic, geodesics, norms, presets, reconstruct
from .errors import (
    ChartFailure,
    ConstructionImpossible,
    ConvexityViolation,
    FinslerError,
    InsufficientCone,
    NumericError,
    SeparationViolation,
    TopologyError,
)

__all__ = [
    "norms",
    "elastic",
    "domains",
    "geodesics",
    "distances",
    "reconstruct",
    "presets",
    "cli",
    "FinslerError",
    "ConvexityViolation",
    "SeparationViolation",
    "NumericError",
    "TopologyError",
    "ChartFailure",
    "InsufficientCone",
    "ConstructionImpossible",
]
