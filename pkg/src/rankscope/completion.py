"""Matrix completion solvers for the rank test pipeline.

Two solvers over a partial observation set:

* fixed-rank hard-impute, the Eq.-style subproblem
  min_{rank(Y)=r} sum_{(i,j) in Omega} (M_ij - Y_ij)^2, solved by alternating
  missing-entry fill-in with rank-r truncation;
* nuclear-norm soft-impute, min_Y 1/2 sum_Omega (M - Y)^2 + reg * ||Y||_*,
  solved by iterative soft-thresholding of singular values.

Both objectives are provably non-increasing per iteration, which the solvers
also verify at runtime.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InputError, NumericalFailure
from .matrix_core import DenseMatrix, ObservationSet, svd, truncate_rank

__all__ = [
    "CompletionConfig",
    "CompletionResult",
    "complete_fixed_rank",
    "complete_nuclear_norm",
    "sse",
    "default_nuclear_reg",
]

# Monotone in exact arithmetic; allow this much relative float jitter before
# declaring divergence.
_DIVERGENCE_TOL = 1e-6


@dataclass
class CompletionConfig:
    """Solver controls. init=None means zero-fill; a DenseMatrix warm-starts."""

    max_iters: int = 500
    tol: float = 1e-8
    init: DenseMatrix | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not self.tol > 0:
            raise InputError("tol must be positive")


@dataclass
class CompletionResult:
    estimate: DenseMatrix
    sse: float
    iterations: int
    converged: bool


def sse(obs: ObservationSet, y: DenseMatrix) -> float:
    """Sum of squared residuals on the observed cells only."""
    if (obs.rows, obs.cols) != y.shape:
        raise DimensionError(
            f"observation grid {obs.rows}x{obs.cols} vs matrix {y.rows}x{y.cols}"
        )
    resid = obs.values - y.data[obs.ii, obs.jj]
    return float(resid @ resid)


def default_nuclear_reg(obs: ObservationSet, divisor: float = 50.0) -> float:
    """Scale-free default reg: lambda_1 of the zero-filled matrix over 50."""
    s = np.linalg.svd(obs.zero_filled().data, compute_uv=False)
    return float(s[0]) / divisor


def _solver_setup(obs: ObservationSet, cfg: CompletionConfig | None):
    cfg = cfg or CompletionConfig()
    x = np.zeros((obs.rows, obs.cols))
    x[obs.ii, obs.jj] = obs.values
    mask = obs.dense_mask()
    if cfg.init is not None:
        if cfg.init.shape != (obs.rows, obs.cols):
            raise DimensionError("warm-start shape does not match grid")
        y = cfg.init.to_array()
    else:
        y = np.zeros_like(x)
    return cfg, x, mask, y


def _rel_change(prev: float, cur: float) -> float:
    return abs(prev - cur) / max(prev, 1e-300)


def complete_fixed_rank(
    obs: ObservationSet, r: int, cfg: CompletionConfig | None = None
) -> CompletionResult:
    """Hard-impute solution of the rank-r completion subproblem."""
    if len(obs) == 0:
        raise InputError("empty observation set")
    if not 1 <= r <= min(obs.rows, obs.cols):
        raise DimensionError(f"rank {r} outside [1, {min(obs.rows, obs.cols)}]")
    dof = r * (obs.rows + obs.cols - r)
    if len(obs) < dof:
        warnings.warn(
            f"|Omega|={len(obs)} below the rank-{r} degrees of freedom {dof}; "
            "completion is under-determined",
            stacklevel=2,
        )
    cfg, x, mask, y = _solver_setup(obs, cfg)

    prev = None
    converged = False
    iterations = 0
    est = None
    for iterations in range(1, cfg.max_iters + 1):
        filled = np.where(mask, x, y)
        est = truncate_rank(svd(DenseMatrix.from_array(filled)), r)
        y = est.data
        resid = x[mask] - y[mask]
        obj = float(resid @ resid)
        if prev is not None:
            if obj > prev * (1.0 + _DIVERGENCE_TOL) and obj - prev > 1e-12:
                raise NumericalFailure(
                    f"objective increased from {prev:.6e} to {obj:.6e}"
                )
            if _rel_change(prev, obj) < cfg.tol:
                converged = True
                prev = obj
                break
        prev = obj
        if obj == 0.0:
            converged = True
            break
    return CompletionResult(est, float(prev), iterations, converged)


def complete_nuclear_norm(
    obs: ObservationSet, reg: float, cfg: CompletionConfig | None = None
) -> DenseMatrix:
    """Soft-impute solution of the nuclear-norm-regularized completion."""
    if len(obs) == 0:
        raise InputError("empty observation set")
    if reg < 0:
        raise InputError("reg must be nonnegative")
    cfg, x, mask, y = _solver_setup(obs, cfg)

    prev = None
    for _ in range(cfg.max_iters):
        filled = np.where(mask, x, y)
        u, s, vt = np.linalg.svd(filled, full_matrices=False)
        s_shrunk = np.maximum(s - reg, 0.0)
        y = (u * s_shrunk) @ vt
        resid = x[mask] - y[mask]
        obj = 0.5 * float(resid @ resid) + reg * float(s_shrunk.sum())
        if prev is not None:
            if obj > prev * (1.0 + _DIVERGENCE_TOL) and obj - prev > 1e-12:
                raise NumericalFailure(
                    f"objective increased from {prev:.6e} to {obj:.6e}"
                )
            if _rel_change(prev, obj) < cfg.tol:
                break
        prev = obj
        if obj == 0.0:
            break
    return DenseMatrix.from_array(y)
