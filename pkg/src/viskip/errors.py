"""Exception types shared across the library.

Every failure mode a caller is expected to distinguish gets its own class;
everything derives from :class:`ViskipError` so blanket handling stays easy.
"""


class ViskipError(Exception):
    """Base class for all library errors."""


class DimensionError(ViskipError, ValueError):
    """Shape or dimensionality of an input is wrong."""


class NonFiniteError(ViskipError, ValueError):
    """A NaN or infinity entered (or would leave) a public operation."""


class ParameterError(ViskipError, ValueError):
    """A scalar parameter is outside its admissible range."""


class SingularMatrixError(ViskipError, ValueError):
    """Linear system is singular or too ill-conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EigenSolverError(ViskipError, RuntimeError):
    """Dense eigenvalue iteration failed to converge."""


class NotMonotoneError(ViskipError, ValueError):
    """Operator is not (quasi-)strongly monotone: mu <= 0."""


class NotCocoerciveError(ViskipError, ValueError):
    """Spectral test found Re(1/lambda) <= 0: no finite cocoercivity modulus."""


class UnsupportedProblemError(ViskipError, ValueError):
    """Operation is undefined for this problem type (e.g. no unique solution)."""


class CertificateError(ViskipError, AssertionError):
    """An estimator inequality certificate was violated at a trial point."""

    def __init__(self, message, inequality=None, point_index=None, slack=None):
        super().__init__(message)
        self.inequality = inequality
        self.point_index = point_index
        self.slack = slack


class DivergenceError(ViskipError, RuntimeError):
    """Iterates became non-finite or exceeded the divergence guard."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateStartError(ViskipError, ValueError):
    """Relative error is undefined because x0 equals the solution."""


class InfeasiblePointError(ViskipError, ValueError):
    """Point violates the constraint set beyond tolerance."""


class ConfigError(ViskipError, ValueError):
    """Experiment config failed validation; carries the offending field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TuningError(ViskipError, RuntimeError):
    """Every grid point of a step-size sweep failed."""


class StudyError(ViskipError, RuntimeError):
    """A scaling-study cell failed to reach the target accuracy."""
