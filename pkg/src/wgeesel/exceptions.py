"""Exception hierarchy shared across the package."""


class WgeeselError(Exception):
    """Base class for all package errors."""


class DataValidationError(WgeeselError, ValueError):
    """Input data violates a structural requirement (ragged panel, bad values)."""


class NonMonotoneError(DataValidationError):
    """Observation pattern is not monotone dropout.

    Attributes
    ----------
    violations : list of (subject_id, occasion)
        First offending occasion (1-based) for every bad subject.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        head = ", ".join(f"subject {s} at occasion {o}" for s, o in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"non-monotone missingness: {head}{more}")


class ConvergenceError(WgeeselError, RuntimeError):
    """Iterative solver stopped without meeting its tolerance.

    The partially fitted result, when one exists, is attached as ``fit``.
    """

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class SeparationError(ConvergenceError):
    """Logistic likelihood is maximized at infinity (complete separation)."""


class SingularMatrixError(WgeeselError, ArithmeticError):
    """A matrix that must be inverted is singular or numerically so."""


class NotPositiveDefiniteError(WgeeselError, ArithmeticError):
    """A working correlation or covariance matrix is not positive definite."""


class ScenarioError(WgeeselError, ValueError):
    """A simulation scenario file is malformed."""
