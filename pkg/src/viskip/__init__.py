"""Solvers and a deterministic federated simulator for distributed
variational inequality problems, built around randomized prox-skipping
with control variates, plus the experiment harness that drives them."""

from .errors import (
    CertificateError,
    ConfigError,
    DegenerateStartError,
    DimensionError,
    DivergenceError,
    EigenSolverError,
    InfeasiblePointError,
    NonFiniteError,
    NotCocoerciveError,
    NotMonotoneError,
    ParameterError,
    SingularMatrixError,
    StudyError,
    TuningError,
    UnsupportedProblemError,
    ViskipError,
)
from .numerics import RngStream, project_simplex, solve_linear, spectrum

__all__ = [
    "CertificateError", "ConfigError", "DegenerateStartError", "DimensionError",
    "DivergenceError", "EigenSolverError", "InfeasiblePointError", "NonFiniteError",
    "NotCocoerciveError", "NotMonotoneError", "ParameterError", "SingularMatrixError",
    "StudyError", "TuningError", "UnsupportedProblemError", "ViskipError",
    "RngStream", "project_simplex", "solve_linear", "spectrum",
]

__version__ = "0.1.0"
