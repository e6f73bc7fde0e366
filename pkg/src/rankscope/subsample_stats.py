"""Nested sub-sampling chains, Z-statistics, and the variance-ratio test.

Builds the chain Omega_0 dominated by ... dominated by Omega_L with leave-out
c, differences the completion residuals into Z_l = SSE_{l-1} - SSE_l, and forms
the moment estimators

    sigma1_sq = sum(Z_l) / (c L)
    sigma2_sq = sqrt( sum((Z_l - Zbar)^2) / (2 c L) )

whose ratio is asymptotically N(1, (c+2)/(2cL)) at the true rank. The
split-sample variant over two disjoint chains has variance (c+10)/(2cL).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .completion import CompletionConfig, complete_fixed_rank
from .exceptions import (
    DegenerateStatisticError,
    DimensionError,
    InfeasibleChainError,
    InputError,
    NumericalFailure,
)
from .matrix_core import ObservationSet

__all__ = [
    "SubsampleChain",
    "ZSequence",
    "AsymptoticParams",
    "VarianceRatio",
    "build_chain",
    "compute_z",
    "sigma1_sq",
    "sigma2_sq",
    "variance_ratio",
    "threshold",
    "split_variance_ratio",
    "simulate_chi_square_ratio",
    "save_z_sequence",
    "load_z_sequence",
]


@dataclass(frozen=True)
class SubsampleChain:
    """Index sets Omega_0 > Omega_1 > ... > Omega_L, each smaller by c."""

    sets: list
    c: int
    L: int
    seed: int

    def __post_init__(self):
        if len(self.sets) != self.L + 1:
            raise DimensionError("chain must hold L+1 index sets")
        for l in range(1, self.L + 1):
            if len(self.sets[l - 1]) - len(self.sets[l]) != self.c:
                raise InfeasibleChainError(f"cardinality step at level {l} is not c")

    def index_set(self, l: int) -> np.ndarray:
        """(m_l, 2) array of (i, j) pairs for Omega_l."""
        return self.sets[l]


@dataclass(frozen=True)
class ZSequence:
    """Differenced residuals Z_1..Z_L at a tested rank, with the SSE trace."""

    z: np.ndarray
    c: int
    L: int
    rank_tested: int
    sse_trace: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1 or z.size != self.L:
            raise DimensionError("z must be a length-L vector")
        if self.L < 2:
            raise InputError("need at least two sub-samples (L >= 2)")
        if self.c < 1:
            raise InputError("c must be >= 1")
        object.__setattr__(self, "z", z)
        if self.sse_trace is not None:
            t = np.asarray(self.sse_trace, dtype=np.float64)
            if t.size != self.L + 1:
                raise DimensionError("sse trace must have L+1 entries")
            object.__setattr__(self, "sse_trace", t)


@dataclass(frozen=True)
class AsymptoticParams:
    """The limit constants of Theorem 1 / Proposition 1 for given (c, L)."""

    c: int
    L: int
    ratio_mean: float = 1.0

    def __post_init__(self):
        if self.c < 1 or self.L < 1:
            raise InputError("c and L must be >= 1")

    @property
    def ratio_variance(self) -> float:
        return (self.c + 2) / (2 * self.c * self.L)

    @property
    def split_ratio_variance(self) -> float:
        return (self.c + 10) / (2 * self.c * self.L)

    @property
    def cov_matrix(self) -> np.ndarray:
        c = self.c
        return np.array([[2 / c, 4 / c], [4 / c, 2 + 12 / c]])

    @property
    def indep_cov(self) -> np.ndarray:
        c = self.c
        return np.array([[2 / c, 0.0], [0.0, 2 + 12 / c]])

    @property
    def cov_positive_definite(self) -> bool:
        return bool(np.all(np.linalg.eigvalsh(self.cov_matrix) > 0))

    def to_json(self) -> str:
        return json.dumps(
            {
                "c": self.c,
                "L": self.L,
                "ratio_variance": self.ratio_variance,
                "split_ratio_variance": self.split_ratio_variance,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass(frozen=True)
class VarianceRatio:
    ratio: float
    standardized: float


def build_chain(
    obs: ObservationSet, c: int, L: int, seed: int, r_max: int | None = None
) -> SubsampleChain:
    """Nested chain by uniform without-replacement removal, reproducible by seed."""
    if c < 1:
        raise InputError("c must be >= 1 (c=0 gives a degenerate chi-square)")
    if L < 1:
        raise InputError("L must be >= 1")
    m = len(obs)
    if c * L >= m:
        raise InfeasibleChainError(f"cL = {c * L} >= |Omega| = {m}")
    if r_max is not None:
        dof = r_max * (obs.rows + obs.cols - r_max)
        if m - c * L < dof:
            warnings.warn(
                f"terminal set size {m - c * L} below rank-{r_max} degrees of "
                f"freedom {dof}; completions may be under-determined",
                stacklevel=2,
            )
    rng = np.random.default_rng(seed)
    # removing the first c*l entries of one uniform permutation is the same law
    # as removing c uniformly at each step
    order = rng.permutation(m)
    pairs = np.column_stack([obs.ii, obs.jj])
    sets = []
    for l in range(L + 1):
        keep = np.sort(order[c * l:])
        sets.append(pairs[keep])
    return SubsampleChain(sets, c, L, seed)


def compute_z(
    chain: SubsampleChain,
    obs: ObservationSet,
    r: int,
    solver_cfg: CompletionConfig | None = None,
) -> ZSequence:
    """Z_l = SSE_{l-1} - SSE_l down the chain, warm-starting each solve."""
    if r < 1:
        raise InputError("r must be >= 1")
    base_cfg = solver_cfg or CompletionConfig()
    value_of = np.zeros((obs.rows, obs.cols))
    value_of[obs.ii, obs.jj] = obs.values

    sse_trace = np.empty(chain.L + 1)
    warm = base_cfg.init
    for l in range(chain.L + 1):
        idx = chain.index_set(l)
        level_obs = ObservationSet(
            obs.rows, obs.cols, idx[:, 0], idx[:, 1], value_of[idx[:, 0], idx[:, 1]]
        )
        cfg = replace(base_cfg, init=warm)
        try:
            result = complete_fixed_rank(level_obs, r, cfg)
        except NumericalFailure as e:
            raise NumericalFailure(f"completion failed at chain level {l}: {e}") from e
        sse_trace[l] = result.sse
        warm = result.estimate
    z = -np.diff(sse_trace)
    # when rank r interpolates the data exactly, the trace is pure SVD
    # round-off; snap it to true zeros so sigma1_sq == 0 signals degeneracy
    energy = float(obs.values @ obs.values)
    if sse_trace.max() <= 1e-24 * energy:
        z[:] = 0.0
    # solver suboptimality can push Z_l slightly negative; never clamp
    bad = z < -1e-6 * np.maximum(sse_trace[:-1], 1e-300)
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} of {chain.L} Z values are negative beyond solver "
            "tolerance; statistics may be biased",
            stacklevel=2,
        )
    return ZSequence(z, chain.c, chain.L, r, sse_trace)


def sigma1_sq(zs: ZSequence) -> float:
    """First-moment estimator, Eq. (3): sum(Z)/(cL)."""
    return float(zs.z.sum() / (zs.c * zs.L))


def sigma2_sq(zs: ZSequence) -> float:
    """Second-moment estimator, Eq. (4): sqrt(sum((Z-Zbar)^2)/(2cL))."""
    centered = zs.z - zs.z.mean()
    return float(np.sqrt(centered @ centered / (2 * zs.c * zs.L)))


def variance_ratio(zs: ZSequence) -> VarianceRatio:
    """sigma2_sq/sigma1_sq and its standardization under Theorem 1."""
    s1 = sigma1_sq(zs)
    if s1 == 0.0:
        raise DegenerateStatisticError(
            "sigma1_sq is zero: all residual differences vanish "
            "(tested rank already sufficient)"
        )
    ratio = sigma2_sq(zs) / s1
    scale = np.sqrt(AsymptoticParams(zs.c, zs.L).ratio_variance)
    return VarianceRatio(ratio, (ratio - 1.0) / scale)


def threshold(c: int, L: int, alpha: float, two_sided: bool = False) -> float:
    """One-sided upper critical value b = 1 + q_{1-alpha} sqrt((c+2)/(2cL)).

    The under-fitted rank inflates the ratio, so the upper tail is the default;
    two_sided=True returns the upper bound of the symmetric two-sided test.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must be in (0, 1)")
    q = stats.norm.ppf(1 - alpha / 2 if two_sided else 1 - alpha)
    return float(1.0 + q * np.sqrt(AsymptoticParams(c, L).ratio_variance))


def split_variance_ratio(zs: ZSequence, xs: ZSequence) -> VarianceRatio:
    """Split statistic: sigma2_sq from one chain over sigma1_sq from another.

    Proposition 1: the two halves are independent, so the standardized
    statistic has variance (c+10)/(2cL) instead of (c+2)/(2cL).
    """
    if zs.L != xs.L or zs.c != xs.c:
        raise DimensionError("both sequences must share c and L")
    s1 = sigma1_sq(zs)
    if s1 == 0.0:
        raise DegenerateStatisticError("sigma1_sq is zero in the first half")
    ratio = sigma2_sq(xs) / s1
    scale = np.sqrt(AsymptoticParams(zs.c, zs.L).split_ratio_variance)
    return VarianceRatio(ratio, (ratio - 1.0) / scale)


def simulate_chi_square_ratio(
    c: int,
    L: int,
    reps: int,
    seed: int,
    statistic: str = "dependent",
    sigma: float = 1.0,
) -> np.ndarray:
    """Monte Carlo draws of the ratio with Z_l ~ sigma^2 chi^2(c) i.i.d.

    sigma cancels algebraically in the ratio, so it is never multiplied in;
    identical seeds give bitwise-identical samples for any sigma > 0.
    """
    if reps < 100:
        raise InputError("reps must be >= 100")
    if c < 1 or L < 2:
        raise InputError("need c >= 1 and L >= 2")
    if not sigma > 0:
        raise InputError("sigma must be positive")
    if statistic not in ("dependent", "split"):
        raise InputError(f"unknown statistic {statistic!r}")
    rng = np.random.default_rng(seed)

    def ratio_of(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        s1 = den.sum(axis=1) / (c * L)
        centered = num - num.mean(axis=1, keepdims=True)
        s2 = np.sqrt((centered * centered).sum(axis=1) / (2 * c * L))
        return s2 / s1

    z = rng.chisquare(c, size=(reps, L))
    if statistic == "dependent":
        return ratio_of(z, z)
    x = rng.chisquare(c, size=(reps, L))
    return ratio_of(x, z)


def save_z_sequence(zs: ZSequence, path) -> None:
    """CSV `l,sse,z` with a sidecar comment carrying (c, rank).

    The l=0 row holds the initial SSE and an empty z.
    """
    trace = zs.sse_trace
    with open(path, "w", newline="") as fh:
        fh.write(f"# c={zs.c} rank={zs.rank_tested}\n")
        fh.write("l,sse,z\n")
        for l in range(zs.L + 1):
            sse_s = "%.17g" % trace[l] if trace is not None else ""
            z_s = "%.17g" % zs.z[l - 1] if l > 0 else ""
            fh.write(f"{l},{sse_s},{z_s}\n")


def load_z_sequence(path) -> ZSequence:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise InputError(f"missing sidecar header in {path}")
        try:
            parts = dict(p.split("=") for p in header.lstrip("#").split())
            c, rank = int(parts["c"]), int(parts["rank"])
        except (ValueError, KeyError) as e:
            raise InputError(f"malformed sidecar header in {path}") from e
        if fh.readline().strip() != "l,sse,z":
            raise InputError(f"missing l,sse,z header in {path}")
        sses, zvals = [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            l_s, sse_s, z_s = line.split(",")
            sses.append(float(sse_s) if sse_s else np.nan)
            if int(l_s) > 0:
                zvals.append(float(z_s))
    trace = np.array(sses)
    z = np.array(zvals)
    if not np.all(np.isfinite(trace)):
        trace = None
    return ZSequence(z, c, z.size, rank, trace)
