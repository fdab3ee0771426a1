"""Exception hierarchy.

Two families matter to the CLI: ``ModelError`` (bad input, exit code 1) and
``SolverError`` (a numerical routine gave up, exit code 2).
"""


class LDPError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(LDPError, ValueError):
    pass


class SolverError(LDPError, RuntimeError):
    pass


# --- model / input errors -------------------------------------------------

class ExpressionSyntaxError(ModelError):
    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at position {position}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class UnknownIdentifier(ModelError):
    pass


class IndexOutOfRange(ModelError):
    pass


class ModelEvaluationError(ModelError):
    """An expression produced a non-finite value or left its domain."""


class DuplicateEdge(ModelError):
    pass


class EdgeRateNotBoundedAway(ModelError):
    pass


class NegativeRate(ModelError):
    pass


class EllipticityViolated(ModelError):
    pass


class GridTooCoarse(ModelError):
    pass


class NotIrreducible(ModelError):
    pass


class NegativeArgument(ModelError):
    pass


class ModelNotDensityIndependent(ModelError):
    pass


class InvalidState(ModelError):
    pass


# --- solver errors --------------------------------------------------------

class SolverFailed(SolverError):
    pass


class OptimizerDidNotConverge(SolverError):
    pass


class PowerIterationStalled(SolverError):
    pass


class StepRejected(SolverError):
    pass


class StepTooCoarse(SolverError):
    pass


class NonFiniteSample(SolverError):
    pass


class DegenerateWeights(SolverError):
    pass
