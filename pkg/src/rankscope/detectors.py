"""End-to-end rank detectors.

Three ways to estimate the rank (source count) from one observation set:

* variance ratio: walk r = 1..r_max, accept the first rank whose ratio
  sigma2_sq/sigma1_sq drops below the threshold b (optionally after rotating
  the grid by theta_opt first);
* averaged rotations: complete the observations after each of D rotations,
  average the top-n singular values, threshold the cumulative fraction;
* baseline: zero-fill, SVD, threshold the cumulative singular-value fraction.

Inconclusive outcomes (no rank accepted) are first-class results, not errors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .completion import CompletionConfig, complete_nuclear_norm, default_nuclear_reg
from .exceptions import (
    DegenerateStatisticError,
    DimensionError,
    InputError,
    NumericalFailure,
    RankscopeError,
)
from .matrix_core import ObservationSet, svd
from .rotation import apply_rotation, default_angle_grid, find_theta_opt, rotation_map
from .subsample_stats import build_chain, compute_z, threshold, variance_ratio

__all__ = [
    "RankDecision",
    "VarianceRatioConfig",
    "AveragedRotationsConfig",
    "detect_variance_ratio",
    "detect_averaged_rotations",
    "detect_baseline",
    "save_decision",
    "decision_to_json",
]

METHOD_VARIANCE_RATIO = "variance_ratio"
METHOD_AVERAGED_ROTATIONS = "averaged_rotations"
METHOD_BASELINE = "baseline"


@dataclass(frozen=True)
class RankDecision:
    """Estimated rank with the per-rank statistic trace and threshold used."""

    r_hat: int
    method: str
    trace: tuple
    threshold_used: float
    rotation_used: float | None = None
    inconclusive: bool = False
    saturated: bool = False


def decision_to_json(d: RankDecision) -> str:
    payload = {
        "method": d.method,
        "r_hat": d.r_hat,
        "threshold_used": d.threshold_used,
        "rotation_used": d.rotation_used,
        "trace": list(d.trace),
        "inconclusive": d.inconclusive,
        "saturated": d.saturated,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def save_decision(d: RankDecision, path) -> None:
    with open(path, "w") as fh:
        fh.write(decision_to_json(d))
        fh.write("\n")


@dataclass
class VarianceRatioConfig:
    """Algorithm-1 controls; give exactly one of b or alpha."""

    r_max: int = 4
    c: int = 2
    L: int = 750
    b: float | None = None
    alpha: float | None = None
    use_rotation: bool = False
    seed: int = 0
    solver: CompletionConfig = field(default_factory=CompletionConfig)
    angles: np.ndarray | None = None
    reg: float | None = None

    def __post_init__(self):
        if (self.b is None) == (self.alpha is None):
            raise InputError("set exactly one of b or alpha")
        if self.r_max < 1:
            raise InputError("r_max must be >= 1")

    def resolved_threshold(self) -> float:
        if self.b is not None:
            return float(self.b)
        return threshold(self.c, self.L, self.alpha)


def detect_variance_ratio(obs: ObservationSet, cfg: VarianceRatioConfig) -> RankDecision:
    """Algorithm 1: smallest rank whose variance ratio clears the threshold.

    A degenerate statistic (sigma1_sq = 0, all residual differences zero) is
    treated as acceptance at that rank.
    """
    b = cfg.resolved_threshold()
    rotation_used = None
    if cfg.use_rotation:
        profile = find_theta_opt(obs, cfg.angles, cfg.reg, cfg.solver)
        rotation_used = profile.theta_opt
        obs = apply_rotation(obs, rotation_map(obs.rows, profile.theta_opt))
    chain = build_chain(obs, cfg.c, cfg.L, cfg.seed, r_max=cfg.r_max)
    trace: list[float] = []
    for r in range(1, cfg.r_max + 1):
        zs = compute_z(chain, obs, r, cfg.solver)
        try:
            ratio = variance_ratio(zs).ratio
        except DegenerateStatisticError:
            trace.append(0.0)
            return RankDecision(r, METHOD_VARIANCE_RATIO, tuple(trace), b,
                               rotation_used)
        trace.append(ratio)
        if ratio < b:
            return RankDecision(r, METHOD_VARIANCE_RATIO, tuple(trace), b,
                               rotation_used)
    return RankDecision(0, METHOD_VARIANCE_RATIO, tuple(trace), b, rotation_used,
                       inconclusive=True)


@dataclass
class AveragedRotationsConfig:
    """Algorithm-2 controls."""

    n: int = 20
    D: int = 20
    b: float = 0.8
    angles: np.ndarray | None = None
    reg: float | None = None
    # used only when reg is None: reg = lambda_1(zero-filled) / reg_divisor
    reg_divisor: float = 50.0
    seed: int = 0
    solver: CompletionConfig = field(default_factory=CompletionConfig)

    def __post_init__(self):
        if self.n < 1:
            raise InputError("n must be >= 1")
        if self.D < 1:
            raise InputError("D must be >= 1")
        if self.reg_divisor <= 0:
            raise InputError("reg_divisor must be positive")


def detect_averaged_rotations(
    obs: ObservationSet, cfg: AveragedRotationsConfig
) -> RankDecision:
    """Algorithm 2: threshold the rotation-averaged cumulative spectrum."""
    if cfg.n > min(obs.rows, obs.cols):
        raise DimensionError(f"n = {cfg.n} exceeds min grid side")
    angles = cfg.angles if cfg.angles is not None else default_angle_grid(cfg.D)
    angles = np.asarray(angles, dtype=np.float64)
    reg = cfg.reg if cfg.reg is not None else default_nuclear_reg(
        obs, cfg.reg_divisor)

    sums = np.zeros(cfg.n)
    used = 0
    for theta in angles:
        try:
            rotated = apply_rotation(obs, rotation_map(obs.rows, theta))
            completed = complete_nuclear_norm(rotated, reg, cfg.solver)
        except RankscopeError as e:
            warnings.warn(f"angle {theta:.4f} skipped: {e}", stacklevel=2)
            continue
        s = np.linalg.svd(completed.data, compute_uv=False)
        sums += s[: cfg.n]
        used += 1
    if used == 0:
        raise NumericalFailure("completion failed at every rotation angle")
    total = float(sums.sum())
    fracs = np.cumsum(sums) / total
    trace = tuple(float(f) for f in fracs)
    hit = np.nonzero(fracs > cfg.b)[0]
    if hit.size:
        return RankDecision(int(hit[0]) + 1, METHOD_AVERAGED_ROTATIONS, trace, cfg.b)
    return RankDecision(cfg.n, METHOD_AVERAGED_ROTATIONS, trace, cfg.b,
                        saturated=True)


def detect_baseline(obs: ObservationSet, b: float) -> RankDecision:
    """Zero-fill, SVD, threshold the cumulative singular-value fraction."""
    d = svd(obs.zero_filled())
    s = d.singular_values
    total = float(s.sum())
    if total == 0.0:
        # all-zero observations carry no spectrum; report saturation at full rank
        n = s.size
        return RankDecision(n, METHOD_BASELINE, tuple([0.0] * n), b, saturated=True)
    fracs = np.cumsum(s) / total
    trace = tuple(float(f) for f in fracs)
    hit = np.nonzero(fracs > b)[0]
    if hit.size:
        return RankDecision(int(hit[0]) + 1, METHOD_BASELINE, trace, b)
    return RankDecision(s.size, METHOD_BASELINE, trace, b, saturated=True)
