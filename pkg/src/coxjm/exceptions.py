"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, numerical /
convergence failures exit 3, I/O problems exit 4.
"""


class CoxjmError(Exception):
    """Base class for all package errors."""


class ValidationError(CoxjmError, ValueError):
    """Invalid data, configuration or argument."""


class InsufficientDataError(ValidationError):
    """Too little data to carry out the requested estimation."""


class DegenerateRiskSetError(CoxjmError):
    """A risk-set sum is zero at some event time."""

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"degenerate risk set at event time {time!r}")


class ModeSearchError(CoxjmError):
    """Posterior mode search failed for a subject."""

    def __init__(self, subject_id, message: str | None = None):
        self.subject_id = subject_id
        super().__init__(message or f"posterior mode search failed for subject {subject_id!r}")


class AscentError(CoxjmError):
    """EM step could not restore ascent after the configured number of halvings."""


class NonConvergenceError(CoxjmError):
    """An iterative fit did not converge."""


class SingularOperatorError(CoxjmError):
    """Discretized information operator is numerically singular."""

    def __init__(self, cond: float, message: str | None = None):
        self.cond = cond
        super().__init__(message or f"information operator numerically singular (cond={cond:.3e})")
