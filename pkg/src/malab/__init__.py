"""Numerical laboratory for det D^2 u = |x|^alpha on the unit disc."""

from .core import (
    Regime,
    DiscGrid,
    CartesianGrid,
    PolarGrid,
    ScalarField,
    regime_from_alpha,
    radial_solution,
    hessian_determinant_fd,
    field_from_function,
    resample_to_cartesian,
    MalabError,
    DomainError,
)

__all__ = [
    "Regime",
    "DiscGrid",
    "CartesianGrid",
    "PolarGrid",
    "ScalarField",
    "regime_from_alpha",
    "radial_solution",
    "hessian_determinant_fd",
    "field_from_function",
    "resample_to_cartesian",
    "MalabError",
    "DomainError",
]

__version__ = "0.1.0"
