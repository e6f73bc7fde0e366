"""Grid rotations and the spectral-concentration objective.

A rotation re-indexes grid cells by rotating center-relative coordinates and
rounding to the nearest cell. Generic angles clip cells that leave the grid
and can collide; multiples of pi/2 are exact permutations. The concentration
rho = lambda_1^2 / sum_k lambda_k^2 of the completed, rotated observations is
minimized over a grid of angles to find theta_opt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .completion import CompletionConfig, complete_nuclear_norm, default_nuclear_reg
from .exceptions import (
    DimensionError,
    InputError,
    NumericalFailure,
    RankscopeError,
    UndefinedRatioError,
)
from .matrix_core import DenseMatrix, ObservationSet

__all__ = [
    "GridRotation",
    "RotationProfile",
    "rotation_map",
    "apply_rotation",
    "spectral_concentration",
    "find_theta_opt",
    "default_angle_grid",
    "save_rotation_profile",
]


@dataclass(frozen=True)
class GridRotation:
    """Partial map from source cell to target cell on an n x n grid.

    targets[i*n + j] is the target linear index, or -1 when the rotated image
    falls outside the grid or lost a collision.
    """

    n: int
    theta: float
    targets: np.ndarray
    coverage: float

    def target(self, i: int, j: int) -> tuple[int, int] | None:
        t = int(self.targets[i * self.n + j])
        if t < 0:
            return None
        return divmod(t, self.n)

    @property
    def forward_map(self) -> dict[tuple[int, int], tuple[int, int]]:
        out = {}
        for src, t in enumerate(self.targets):
            if t >= 0:
                out[divmod(src, self.n)] = divmod(int(t), self.n)
        return out


def rotation_map(n: int, theta: float) -> GridRotation:
    """Nearest-neighbor counter-clockwise rotation about the grid center.

    Collisions go to the source with the smaller row-major linear index;
    images outside the grid are dropped.
    """
    if n < 2:
        raise InputError("grid side must be >= 2")
    if not np.isfinite(theta):
        raise InputError("theta must be finite")
    center = (n - 1) / 2.0
    idx = np.arange(n * n)
    i = idx // n
    j = idx % n
    # x to the right, y upward; CCW rotation in those coordinates
    x = j - center
    y = center - i
    ct, st = np.cos(theta), np.sin(theta)
    xr = ct * x - st * y
    yr = st * x + ct * y
    jt = np.rint(xr + center).astype(np.int64)
    it = np.rint(center - yr).astype(np.int64)
    inside = (it >= 0) & (it < n) & (jt >= 0) & (jt < n)

    targets = np.full(n * n, -1, dtype=np.int64)
    src = idx[inside]
    cand = it[inside] * n + jt[inside]
    # np.unique keeps the first occurrence, i.e. the smallest source index
    uniq, first = np.unique(cand, return_index=True)
    targets[src[first]] = uniq
    coverage = float((targets >= 0).sum()) / (n * n)
    return GridRotation(n, float(theta), targets, coverage)


def apply_rotation(obs: ObservationSet, rot: GridRotation) -> ObservationSet:
    """Carry each observed sample to its target cell; unmapped samples drop."""
    if obs.rows != rot.n or obs.cols != rot.n:
        raise DimensionError(
            f"observation grid {obs.rows}x{obs.cols} vs rotation grid {rot.n}"
        )
    t = rot.targets[obs.linear_indices()]
    keep = t >= 0
    tk = t[keep]
    return ObservationSet(obs.rows, obs.cols, tk // rot.n, tk % rot.n,
                          obs.values[keep])


def spectral_concentration(m: DenseMatrix) -> float:
    """rho = lambda_1^2 / sum_k lambda_k^2."""
    s = np.linalg.svd(m.data, compute_uv=False)
    total = float(s @ s)
    if total == 0.0:
        raise UndefinedRatioError("spectral concentration of the zero matrix")
    return float(s[0] * s[0] / total)


def default_angle_grid(d: int = 20) -> np.ndarray:
    """theta_i = (i-1) * pi / (2D) for i = 1..D."""
    return np.arange(d) * np.pi / (2 * d)


@dataclass(frozen=True)
class RotationProfile:
    thetas: np.ndarray
    rho: np.ndarray
    theta_opt: float
    theta_max: float


def find_theta_opt(
    obs: ObservationSet,
    angles: np.ndarray | None = None,
    reg: float | None = None,
    cfg: CompletionConfig | None = None,
) -> RotationProfile:
    """Evaluate rho over an angle grid and pick the argmin.

    Per-angle failures are recorded as NaN and skipped; only a fully failed
    profile is an error. Ties break toward the smaller angle.
    """
    if angles is None:
        angles = default_angle_grid()
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size < 2:
        raise InputError("need at least two candidate angles")
    if obs.rows != obs.cols:
        raise DimensionError("rotation search needs a square grid")
    if reg is None:
        reg = default_nuclear_reg(obs)
    n = obs.rows
    rho = np.full(angles.size, np.nan)
    for k, theta in enumerate(angles):
        try:
            rotated = apply_rotation(obs, rotation_map(n, theta))
            completed = complete_nuclear_norm(rotated, reg, cfg)
            rho[k] = spectral_concentration(completed)
        except RankscopeError:
            continue
    if np.all(np.isnan(rho)):
        raise NumericalFailure("completion failed at every candidate angle")
    theta_opt = float(angles[np.nanargmin(rho)])
    theta_max = float(angles[np.nanargmax(rho)])
    return RotationProfile(angles, rho, theta_opt, theta_max)


def save_rotation_profile(profile: RotationProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("theta,rho\n")
        for t, r in zip(profile.thetas, profile.rho):
            fh.write("%.17g,%.17g\n" % (t, r))
