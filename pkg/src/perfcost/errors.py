"""Exception hierarchy shared by every perfcost module."""

import numpy as np


class PerfCostError(Exception):
    """Base class for all perfcost errors."""


class ShapeError(PerfCostError, ValueError):
    pass


class SchemaError(PerfCostError, ValueError):
    pass


class EmptyDataError(PerfCostError, ValueError):
    pass


class MapEvaluationError(PerfCostError, ValueError):
    """A point map returned a non-finite image."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"map produced a non-finite image at index {index}")


class LinearAlgebraError(PerfCostError, np.linalg.LinAlgError):
    pass


class SizeError(PerfCostError, ValueError):
    pass


class DomainError(PerfCostError, ValueError):
    pass


class OptimizationError(PerfCostError, RuntimeError):
    pass


class InversionError(OptimizationError):
    pass


class IllPosedError(PerfCostError, np.linalg.LinAlgError):
    pass


class IdentifiabilityError(PerfCostError, ValueError):
    pass


class LearningRateError(PerfCostError, RuntimeError):
    pass


class DivergenceError(PerfCostError, RuntimeError):
    pass


class ConfigError(PerfCostError, ValueError):
    pass


class ReportError(PerfCostError, RuntimeError):
    pass


class InsufficientDataError(PerfCostError, ValueError):
    pass
