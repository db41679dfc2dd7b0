"""Sublinear pricing of defaultable payment streams on finite scenario trees."""

from __future__ import annotations

from ._backend import NAME as BACKEND
from .errors import (
    ConfigError,
    DecompositionError,
    EnumerationLimitError,
    InfeasiblePolytopeError,
    NoSublinearityError,
    NumericalAssertionError,
    RobustformError,
)
from .lattice import (
    AmbiguitySet,
    FiniteKernels,
    IntensityRule,
    MartingalePolytope,
    PriorSelection,
    ScenarioTree,
    TimeGrid,
    TreeConfig,
    build_tree,
    polytope_vertices,
    validate_martingale,
)
from .f_expectation import (
    ValueField,
    check_tower,
    conditional_under_prior,
    maximizing_selection,
    sublinear_expectation,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AmbiguitySet",
    "ConfigError",
    "DecompositionError",
    "EnumerationLimitError",
    "FiniteKernels",
    "InfeasiblePolytopeError",
    "IntensityRule",
    "MartingalePolytope",
    "NoSublinearityError",
    "NumericalAssertionError",
    "PriorSelection",
    "RobustformError",
    "ScenarioTree",
    "TimeGrid",
    "TreeConfig",
    "ValueField",
    "build_tree",
    "check_tower",
    "conditional_under_prior",
    "maximizing_selection",
    "polytope_vertices",
    "sublinear_expectation",
    "validate_martingale",
]
