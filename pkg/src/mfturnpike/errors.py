"""Exception types shared across the package."""


class ModelEvaluationError(ValueError):
    """An evaluator returned a non-finite value or a wrongly shaped array."""


class ModelAssumptionError(ValueError):
    """A structural assumption on the model (concavity in u, affinity) failed."""


class DimensionError(ValueError):
    pass


class StructureError(ValueError):
    """An operator does not respect the expected horizontal/vertical split."""


class DegeneracyError(RuntimeError):
    """A Jacobian or Hessian block is numerically singular."""


class NonconvergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class InstabilityError(RuntimeError):
    pass


class RiccatiError(RuntimeError):
    pass


class HypothesisFailure(RuntimeError):
    """A checkable hypothesis (stabilizability, definiteness, ...) failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ValueError):
    pass
