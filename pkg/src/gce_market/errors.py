"""Exception hierarchy shared by the solvers and the command line."""


class GceError(Exception):
    """Base class for all package errors."""


class ScenarioError(GceError, ValueError):
    """Malformed or inadmissible input (dimension mismatch, bad schema, ...)."""


class InfeasibleError(GceError):
    """A convex program had an empty feasible set.

    ``certificate`` carries a small summary of the phase-1 evidence.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = dict(certificate or {})


class ConvergenceError(GceError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})
