"""Constant-step stochastic forward-backward iterations over random monotone
operators, a reference integrator for the mean differential inclusion, and
diagnostics for drift, ergodic and shadowing behavior."""

from . import diagnostics, di_reference, fb_engine, operators, random_model, sets
from .errors import (
    DomainViolationError,
    FbmmError,
    InconclusiveError,
    MissingRepresentationError,
    NoConvergenceError,
    NumericalFailureError,
    ScenarioValidationError,
    UnsupportedOperatorError,
)

__all__ = [
    "operators",
    "sets",
    "random_model",
    "fb_engine",
    "di_reference",
    "diagnostics",
    "FbmmError",
    "DomainViolationError",
    "InconclusiveError",
    "MissingRepresentationError",
    "NoConvergenceError",
    "NumericalFailureError",
    "ScenarioValidationError",
    "UnsupportedOperatorError",
]

__version__ = "0.1.0"
