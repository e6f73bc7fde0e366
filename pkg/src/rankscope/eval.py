"""Monte Carlo harness: repeated trials, confusion matrices, macro-F1, and
distribution checks for the asymptotic theory.

Each trial owns an independent RNG stream derived from
SeedSequence([master_seed, true_count, rep]), so batches are reproducible and
order-independent under parallel execution.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .detectors import (
    AveragedRotationsConfig,
    METHOD_AVERAGED_ROTATIONS,
    METHOD_BASELINE,
    METHOD_VARIANCE_RATIO,
    RankDecision,
    VarianceRatioConfig,
    detect_averaged_rotations,
    detect_baseline,
    detect_variance_ratio,
)
from .exceptions import InputError, RankscopeError
from .fields import ScenarioSpec, generate_scenario
from .matrix_core import DenseMatrix, ObservationSet
from .subsample_stats import AsymptoticParams

__all__ = [
    "ConfusionMatrix",
    "DistributionReport",
    "DetectorSpec",
    "run_trials",
    "macro_f1",
    "empirical_density_check",
    "planted_low_rank",
    "sample_matrix_uniform",
    "save_confusion_csv",
    "confusion_summary_json",
    "save_distribution_report",
    "save_qq_csv",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] for true count i, estimated count j, plus an explicit
    inconclusive column; every row conserves its trial total."""

    true_counts: tuple
    est_classes: tuple
    counts: np.ndarray
    inconclusive: np.ndarray
    trials: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        inconclusive = np.asarray(self.inconclusive, dtype=np.int64)
        trials = np.asarray(self.trials, dtype=np.int64)
        shape = (len(self.true_counts), len(self.est_classes))
        if counts.shape != shape:
            raise InputError(f"counts shape {counts.shape} != {shape}")
        if inconclusive.shape != (shape[0],) or trials.shape != (shape[0],):
            raise InputError("inconclusive/trials must have one entry per true count")
        if np.any(counts < 0) or np.any(inconclusive < 0):
            raise InputError("negative tallies")
        row_totals = counts.sum(axis=1) + inconclusive
        if not np.array_equal(row_totals, trials):
            raise InputError("row sums plus inconclusive must equal trials")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "inconclusive", inconclusive)
        object.__setattr__(self, "trials", trials)

    @classmethod
    def from_results(cls, results: dict, est_max: int = 4) -> "ConfusionMatrix":
        """results maps true count -> list of estimated ranks (None = inconclusive)."""
        true_counts = tuple(sorted(results))
        seen = [r for outcomes in results.values() for r in outcomes if r]
        top = max([est_max] + seen)
        est_classes = tuple(range(1, top + 1))
        counts = np.zeros((len(true_counts), top), dtype=np.int64)
        inconclusive = np.zeros(len(true_counts), dtype=np.int64)
        trials = np.zeros(len(true_counts), dtype=np.int64)
        for row, k in enumerate(true_counts):
            for r in results[k]:
                trials[row] += 1
                if r is None or r == 0:
                    inconclusive[row] += 1
                else:
                    counts[row, r - 1] += 1
        return cls(true_counts, est_classes, counts, inconclusive, trials)

    def cell(self, true_k: int, est_k: int) -> int:
        return int(self.counts[self.true_counts.index(true_k),
                               self.est_classes.index(est_k)])


@dataclass(frozen=True)
class DetectorSpec:
    """Named detector plus its configuration parameters."""

    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        known = (METHOD_VARIANCE_RATIO, METHOD_AVERAGED_ROTATIONS, METHOD_BASELINE)
        if self.method not in known:
            raise InputError(f"unknown method {self.method!r}; expected one of {known}")


def run_detector(obs: ObservationSet, spec: DetectorSpec, seed: int = 0) -> RankDecision:
    if spec.method == METHOD_BASELINE:
        return detect_baseline(obs, float(spec.params["b"]))
    if spec.method == METHOD_AVERAGED_ROTATIONS:
        cfg = AveragedRotationsConfig(seed=seed, **spec.params)
        return detect_averaged_rotations(obs, cfg)
    cfg = VarianceRatioConfig(seed=seed, **spec.params)
    return detect_variance_ratio(obs, cfg)


def _one_trial(scenario: ScenarioSpec, detector: DetectorSpec,
               true_count: int, rep: int, master_seed: int):
    """Single reproducible trial; failures become inconclusive outcomes."""
    ss = np.random.SeedSequence([master_seed, true_count, rep])
    gen_seed, det_seed = ss.spawn(2)
    try:
        _, obs = generate_scenario(scenario, gen_seed, count=true_count)
        decision = run_detector(
            obs, detector, seed=int(det_seed.generate_state(1, dtype=np.uint64)[0])
        )
    except RankscopeError as e:
        warnings.warn(f"trial (K={true_count}, rep={rep}) failed: {e}", stacklevel=2)
        return None
    return None if decision.inconclusive else decision.r_hat


def _one_trial_star(args):
    return _one_trial(*args)


def run_trials(
    scenario: ScenarioSpec,
    detector: DetectorSpec,
    true_counts,
    reps: int,
    master_seed: int,
    workers: int = 1,
) -> ConfusionMatrix:
    """Tally detector outcomes over reps trials per true source count."""
    if reps < 1:
        raise InputError("reps must be >= 1")
    tasks = [(scenario, detector, k, rep, master_seed)
             for k in true_counts for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_trial_star, tasks, chunksize=4))
    else:
        outcomes = [_one_trial_star(t) for t in tasks]
    results: dict[int, list] = {int(k): [] for k in true_counts}
    for (_, _, k, _, _), r_hat in zip(tasks, outcomes):
        results[int(k)].append(r_hat)
    return ConfusionMatrix.from_results(results)


def macro_f1(cm: ConfusionMatrix, classes=(2, 3)) -> float:
    """Mean over classes of 2 P R / (P + R).

    P_i divides the diagonal count by all trials with true count i, counting
    inconclusive outcomes against the method; R_i divides by the column sum.
    This is the convention that reproduces every printed score in the source
    experiment tables.
    """
    scores = []
    for k in classes:
        if k not in cm.true_counts or k not in cm.est_classes:
            warnings.warn(f"class {k} missing from the matrix; scored 0", stacklevel=2)
            scores.append(0.0)
            continue
        row = cm.true_counts.index(k)
        col = cm.est_classes.index(k)
        s_kk = float(cm.counts[row, col])
        trials = float(cm.trials[row])
        col_sum = float(cm.counts[:, col].sum())
        if trials == 0 or col_sum == 0:
            warnings.warn(f"empty denominator for class {k}; scored 0", stacklevel=2)
            scores.append(0.0)
            continue
        p = s_kk / trials
        r = s_kk / col_sum
        scores.append(0.0 if p + r == 0 else 2 * p * r / (p + r))
    return float(np.mean(scores))


@dataclass(frozen=True)
class DistributionReport:
    sample_mean: float
    sample_variance: float
    target_mean: float
    target_variance: float
    ks_distance: float
    ks_pvalue: float
    rejection_rates: dict

    def __post_init__(self):
        if not 0 <= self.ks_distance <= 1:
            raise InputError("KS distance must lie in [0, 1]")
        for rate in self.rejection_rates.values():
            if not 0 <= rate <= 1:
                raise InputError("rejection rates must lie in [0, 1]")


def empirical_density_check(
    samples, c: int, L: int, alpha_grid=(0.01, 0.05, 0.1),
    target_variance: float | None = None,
) -> DistributionReport:
    """Moments, KS distance, and rejection rates against N(1, (c+2)/(2cL)).

    target_variance overrides the default, e.g. (c+10)/(2cL) when checking the
    split statistic; thresholds then standardize with that variance.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 100:
        raise InputError("need at least 100 samples")
    if target_variance is None:
        target_variance = AsymptoticParams(c, L).ratio_variance
    target_sd = np.sqrt(target_variance)
    ks = stats.kstest(samples, lambda x: stats.norm.cdf(x, loc=1.0, scale=target_sd))
    rates = {
        float(a): float(np.mean(
            samples > 1.0 + stats.norm.ppf(1 - a) * target_sd
        ))
        for a in alpha_grid
    }
    return DistributionReport(
        sample_mean=float(samples.mean()),
        sample_variance=float(samples.var(ddof=1)),
        target_mean=1.0,
        target_variance=float(target_variance),
        ks_distance=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        rejection_rates=rates,
    )


def planted_low_rank(
    rows: int, cols: int, rank: int, seed, entry_rms: float = 5.0
) -> DenseMatrix:
    """Random rank-r matrix with orthonormal factors and a graded spectrum.

    Singular values decay geometrically (factor 0.6) and are normalized so
    the root mean square entry is exactly entry_rms.  The grading keeps every
    under-fitted residual dominated by a single rank-one component; a flat
    spectrum can leave small matrices with a near-Gaussian residual whose
    variance ratio sits at 1 even though the rank is wrong.
    """
    if not 1 <= rank <= min(rows, cols):
        raise InputError(f"rank {rank} outside [1, {min(rows, cols)}]")
    if entry_rms <= 0:
        raise InputError("entry_rms must be positive")
    rng = np.random.default_rng(seed)
    u = np.linalg.qr(rng.normal(size=(rows, rank)))[0]
    v = np.linalg.qr(rng.normal(size=(cols, rank)))[0]
    w = 0.6 ** np.arange(rank)
    s = entry_rms * np.sqrt(rows * cols) * w / np.linalg.norm(w)
    return DenseMatrix.from_array((u * s) @ v.T)


def sample_matrix_uniform(
    m: DenseMatrix, omega_size: int, noise_sd: float, seed
) -> ObservationSet:
    """Uniform random observation set of a dense matrix plus N(0, sd^2) noise."""
    total = m.rows * m.cols
    if not 1 <= omega_size <= total:
        raise InputError(f"omega_size {omega_size} outside [1, {total}]")
    rng = np.random.default_rng(seed)
    lin = np.sort(rng.choice(total, size=omega_size, replace=False))
    ii = lin // m.cols
    jj = lin % m.cols
    values = m.data[ii, jj]
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, omega_size)
    return ObservationSet(m.rows, m.cols, ii, jj, values)


def save_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        header = ["true\\est"] + [str(e) for e in cm.est_classes] + ["inconclusive"]
        fh.write(",".join(header) + "\n")
        for row, k in enumerate(cm.true_counts):
            cells = [str(k)] + [str(int(v)) for v in cm.counts[row]]
            cells.append(str(int(cm.inconclusive[row])))
            fh.write(",".join(cells) + "\n")


def confusion_summary_json(cm: ConfusionMatrix, classes=(2, 3)) -> str:
    payload = {
        "true_counts": list(cm.true_counts),
        "est_classes": list(cm.est_classes),
        "counts": cm.counts.tolist(),
        "inconclusive": cm.inconclusive.tolist(),
        "trials": cm.trials.tolist(),
        "macro_f1": macro_f1(cm, classes),
        "f1_classes": list(classes),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def save_distribution_report(report: DistributionReport, path) -> None:
    payload = {
        "sample_mean": report.sample_mean,
        "sample_variance": report.sample_variance,
        "target_mean": report.target_mean,
        "target_variance": report.target_variance,
        "ks_distance": report.ks_distance,
        "ks_pvalue": report.ks_pvalue,
        "rejection_rates": {str(k): v for k, v in report.rejection_rates.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_qq_csv(samples, c: int, L: int, path,
                target_variance: float | None = None) -> None:
    """(sample, target-quantile) pairs for external QQ plotting."""
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    n = samples.size
    if target_variance is None:
        target_variance = AsymptoticParams(c, L).ratio_variance
    sd = np.sqrt(target_variance)
    probs = (np.arange(1, n + 1) - 0.5) / n
    quantiles = stats.norm.ppf(probs, loc=1.0, scale=sd)
    with open(path, "w", newline="") as fh:
        fh.write("sample,target_quantile\n")
        for s, q in zip(samples, quantiles):
            fh.write("%.17g,%.17g\n" % (s, q))
