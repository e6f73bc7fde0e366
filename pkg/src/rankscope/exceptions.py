"""Error types shared across the package."""


class RankscopeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RankscopeError, ValueError):
    """Shapes, index ranges, or vector lengths do not line up."""


class DuplicateIndexError(RankscopeError, ValueError):
    """An observation index set contains a repeated (i, j) pair."""


class InputError(RankscopeError, ValueError):
    """An argument is outside its documented domain."""


class NumericalFailure(RankscopeError, RuntimeError):
    """An iterative numerical routine diverged or failed to converge."""


class InfeasibleChainError(RankscopeError, ValueError):
    """Requested sub-sampling chain would exhaust the observation set."""


class DegenerateStatisticError(RankscopeError, ArithmeticError):
    """Variance-ratio statistic is 0/0: all residual differences vanish."""


class UndefinedRatioError(RankscopeError, ArithmeticError):
    """Spectral concentration of an all-zero matrix."""


class ParameterError(RankscopeError, ValueError):
    """Inadmissible distribution parameters."""


class PlacementError(RankscopeError, RuntimeError):
    """Source placement constraints could not be satisfied."""
