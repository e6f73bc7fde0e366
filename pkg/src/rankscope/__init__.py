"""Rank estimation for incompletely observed noisy low-rank matrices.

Variance-ratio hypothesis tests over nested sub-sampling chains, rotation
detectors, unimodal source field generators, and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .exceptions import (
    DegenerateStatisticError,
    DimensionError,
    DuplicateIndexError,
    InfeasibleChainError,
    InputError,
    NumericalFailure,
    ParameterError,
    PlacementError,
    RankscopeError,
    UndefinedRatioError,
)
from .matrix_core import DenseMatrix, ObservationSet, SpectralDecomposition, svd

__all__ = [
    "__version__",
    "DenseMatrix",
    "ObservationSet",
    "SpectralDecomposition",
    "svd",
    "RankscopeError",
    "DimensionError",
    "DuplicateIndexError",
    "InputError",
    "NumericalFailure",
    "InfeasibleChainError",
    "DegenerateStatisticError",
    "UndefinedRatioError",
    "ParameterError",
    "PlacementError",
]
