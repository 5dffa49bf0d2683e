"""Exception types raised by the solvers and the experiment runner."""


class MFGError(Exception):
    """Base class for all package errors."""


class ValidationError(MFGError, ValueError):
    """Invalid input data or configuration.

    ``field`` names the offending entry (dotted path for config files).
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SolverError(MFGError):
    """Base class for solver failures; ``report`` carries the partial history."""

    kind = "solver-failure"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class MaxIterationsError(SolverError):
    kind = "max-iterations"


class LinearSolveFailure(SolverError):
    kind = "linear-solve-failure"


class UnstableSolutionError(SolverError):
    """The computed equilibrium failed the stability certificate."""

    kind = "unstable-solution"
