"""Empirical statistics over paired score samples.

Everything downstream of generation lives here: mean score differences,
the variance/covariance decomposition relating coupled and independent
generation, win/tie/loss rates, normal-approximation intervals and
two-proportion tests, interval-dominance ranking, and error-versus-sample
-size curves with the derived sample-savings figure.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    InsufficientDataError,
    UnreachableTargetError,
)


class Coupling(Enum):
    COUPLED = "coupled"
    INDEPENDENT = "independent"


@dataclass(frozen=True, eq=False)
class PairedSampleSet:
    """Per-(prompt, replicate) score pairs for one ordered model pair."""

    model_a: str
    model_b: str
    coupling: Coupling
    prompts: tuple
    replicates: np.ndarray
    score_a: np.ndarray
    score_b: np.ndarray

    def __post_init__(self):
        replicates = np.asarray(self.replicates, dtype=np.int64)
        score_a = np.asarray(self.score_a, dtype=np.float64)
        score_b = np.asarray(self.score_b, dtype=np.float64)
        prompts = tuple(self.prompts)
        n = len(prompts)
        if not (replicates.size == score_a.size == score_b.size == n):
            raise ConfigurationError("sample columns have mismatched lengths")
        keys = set(zip(prompts, replicates.tolist()))
        if len(keys) != n:
            raise ConfigurationError("duplicate (prompt, replicate) keys in sample set")
        object.__setattr__(self, "prompts", prompts)
        object.__setattr__(self, "replicates", replicates)
        object.__setattr__(self, "score_a", score_a)
        object.__setattr__(self, "score_b", score_b)

    @property
    def n(self) -> int:
        return len(self.prompts)

    @property
    def diffs(self) -> np.ndarray:
        return self.score_a - self.score_b


@dataclass(frozen=True)
class VarianceReport:
    """Sample variances of score differences and their coupling identity.

    ``identity_residual`` is ``var_diff_independent - var_diff_coupled -
    2 * covariance``; it converges to zero because the independent-noise
    variance decomposes into the shared-noise variance plus twice the
    shared-noise covariance.
    """

    var_diff_coupled: float
    var_diff_independent: float
    covariance: float
    identity_residual: float


@dataclass(frozen=True)
class WinRateReport:
    """Win/loss/tie fractions for an ordered model pair."""

    model_a: str
    model_b: str
    win_rate: float
    loss_rate: float
    tie_rate: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("comparison count must be at least 1")
        for r in (self.win_rate, self.loss_rate, self.tie_rate):
            if not 0.0 <= r <= 1.0:
                raise ConfigurationError(f"rate {r} outside [0, 1]")
        if abs(self.win_rate + self.loss_rate + self.tie_rate - 1.0) > 1e-12:
            raise ConfigurationError("win, loss and tie rates must sum to 1")

    @classmethod
    def from_counts(cls, model_a: str, model_b: str, wins: int, losses: int, ties: int) -> "WinRateReport":
        n = wins + losses + ties
        if n < 1:
            raise InsufficientDataError("no comparisons")
        return cls(model_a, model_b, wins / n, losses / n, ties / n, n)


@dataclass(frozen=True)
class RankEntry:
    model: str
    avg_win_rate: float
    ci_low: float
    ci_high: float
    rank: int


@dataclass(frozen=True)
class RankTable:
    entries: tuple[RankEntry, ...]


@dataclass(frozen=True)
class ErrorCurve:
    """Mean absolute estimation error with percentile bands per sample size."""

    sizes: tuple[int, ...]
    mean_abs_error: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]
    ground_truth: float
    n_subsamples: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigurationError("sizes must be strictly increasing")
        if any(e < 0 for e in self.mean_abs_error):
            raise ConfigurationError("errors must be non-negative")


def mean_score_difference(samples: PairedSampleSet) -> float:
    """Arithmetic mean of ``score_a - score_b``."""
    if samples.n == 0:
        raise InsufficientDataError("empty sample set")
    return float(samples.diffs.mean())


def _check_same_pair(coupled: PairedSampleSet, independent: PairedSampleSet) -> None:
    if coupled.coupling is not Coupling.COUPLED or independent.coupling is not Coupling.INDEPENDENT:
        raise ConfigurationError("expected one coupled and one independent sample set, in that order")
    if (coupled.model_a, coupled.model_b) != (independent.model_a, independent.model_b):
        raise ConfigurationError("sample sets cover different model pairs")


def variance_decomposition(coupled: PairedSampleSet, independent: PairedSampleSet) -> VarianceReport:
    """Sample variances of the score difference under each regime.

    The covariance comes from the coupled set; the residual measures how
    far the realized samples sit from the exact decomposition of the
    independent-noise variance.
    """
    _check_same_pair(coupled, independent)
    if coupled.n < 2 or independent.n < 2:
        raise InsufficientDataError("need at least two samples per regime")
    var_c = float(np.var(coupled.diffs, ddof=1))
    var_i = float(np.var(independent.diffs, ddof=1))
    cov = float(np.cov(coupled.score_a, coupled.score_b, ddof=1)[0, 1])
    return VarianceReport(
        var_diff_coupled=var_c,
        var_diff_independent=var_i,
        covariance=cov,
        identity_residual=var_i - var_c - 2.0 * cov,
    )


def _jackknife_se(loo_values: np.ndarray) -> float:
    n = loo_values.size
    center = loo_values.mean()
    return float(np.sqrt((n - 1) / n * np.sum((loo_values - center) ** 2)))


def _loo_variance(x: np.ndarray) -> np.ndarray:
    # Leave-one-out sample variance (ddof=1) from sufficient statistics.
    n = x.size
    s, q = x.sum(), np.sum(x * x)
    mean_i = (s - x) / (n - 1)
    return (q - x * x - (n - 1) * mean_i**2) / (n - 2)


def _loo_covariance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size
    sa, sb, sab = a.sum(), b.sum(), np.sum(a * b)
    mean_a = (sa - a) / (n - 1)
    mean_b = (sb - b) / (n - 1)
    return (sab - a * b - (n - 1) * mean_a * mean_b) / (n - 2)


def jackknife_residual_se(coupled: PairedSampleSet, independent: PairedSampleSet) -> float:
    """Delete-one jackknife standard error of the identity residual.

    The two sample sets are independent, so the residual's variance is the
    sum of the jackknife variances of its coupled-side and
    independent-side components.
    """
    _check_same_pair(coupled, independent)
    if coupled.n < 3 or independent.n < 3:
        raise InsufficientDataError("need at least three samples per regime for the jackknife")
    coupled_part = _loo_variance(coupled.diffs) + 2.0 * _loo_covariance(coupled.score_a, coupled.score_b)
    independent_part = _loo_variance(independent.diffs)
    return float(np.hypot(_jackknife_se(coupled_part), _jackknife_se(independent_part)))


def win_tie_rates(samples: PairedSampleSet, tol: float = 0.0) -> WinRateReport:
    """Fractions of win/loss/tie outcomes at the given tolerance."""
    if samples.n == 0:
        raise InsufficientDataError("empty sample set")
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    d = samples.diffs
    wins = int(np.count_nonzero(d > tol))
    losses = int(np.count_nonzero(-d > tol))
    return WinRateReport.from_counts(samples.model_a, samples.model_b, wins, losses, samples.n - wins - losses)


def average_win_rate(reports: Iterable[WinRateReport], model: str) -> float:
    """Unweighted mean of a model's win rates against every opponent."""
    rates = {}
    others = set()
    for report in reports:
        others.update((report.model_a, report.model_b))
        if report.model_a == model:
            opponent, rate = report.model_b, report.win_rate
        elif report.model_b == model:
            opponent, rate = report.model_a, report.loss_rate
        else:
            continue
        if opponent in rates:
            raise ConfigurationError(f"duplicate reports for pair ({model!r}, {opponent!r})")
        rates[opponent] = rate
    others.discard(model)
    if not others:
        raise ConfigurationError(f"no reports mention model {model!r}")
    missing = others - set(rates)
    if missing:
        raise ConfigurationError(f"missing opponents for {model!r}: {sorted(missing)}")
    return float(np.mean(list(rates.values())))


def wald_ci(p: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval for a proportion, clamped to [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("proportion must lie in [0, 1]")
    if n < 1:
        raise ValueError("sample count must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(p * (1.0 - p) / n)
    return (max(0.0, p - half), min(1.0, p + half))


def two_proportion_z_test(p1: float, n1: int, p2: float, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z statistic and two-tailed p-value."""
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise ValueError("proportions must lie in [0, 1]")
    if n1 < 1 or n2 < 1:
        raise ValueError("sample counts must be at least 1")
    if p1 == p2:
        return 0.0, 1.0
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    variance = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if variance == 0.0:
        raise DegenerateDataError("pooled variance is zero but proportions differ")
    z = (p1 - p2) / np.sqrt(variance)
    return float(z), float(2.0 * norm.sf(abs(z)))


def rank_from_cis(entries: Sequence[tuple[str, float, tuple[float, float]]]) -> RankTable:
    """Interval-dominance ranking.

    A model's rank is one plus the number of models whose interval lies
    entirely above its own, so statistically indistinguishable models
    share a rank.
    """
    if len(entries) < 2:
        raise ConfigurationError("ranking needs at least two models")
    lows = [ci[0] for _, _, ci in entries]
    ranked = []
    for model, rate, (low, high) in entries:
        rank = 1 + sum(1 for other_low in lows if other_low > high)
        ranked.append(RankEntry(model=model, avg_win_rate=rate, ci_low=low, ci_high=high, rank=rank))
    return RankTable(entries=tuple(ranked))


def error_curve(
    samples: PairedSampleSet, sizes: Sequence[int], n_subsamples: int, seed: int
) -> ErrorCurve:
    """Absolute estimation error of the mean difference versus sample size.

    The full pool's mean difference serves as ground truth; each size is
    re-estimated from ``n_subsamples`` subsets drawn without replacement,
    reporting the mean absolute error and its 2.5/97.5 percentile band.
    """
    if samples.n == 0:
        raise InsufficientDataError("empty sample set")
    if n_subsamples < 1:
        raise ValueError("n_subsamples must be at least 1")
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if sizes[0] < 1 or sizes[-1] > samples.n:
        raise ValueError(f"sizes must lie in [1, {samples.n}]")
    diffs = samples.diffs
    truth = diffs.mean()
    rng = np.random.default_rng(seed)
    means, lows, highs = [], [], []
    for size in sizes:
        errors = np.empty(n_subsamples)
        for j in range(n_subsamples):
            idx = rng.choice(samples.n, size=size, replace=False, shuffle=False)
            idx.sort()  # summation order fixed so a full-pool subsample has error exactly 0
            errors[j] = abs(diffs[idx].mean() - truth)
        means.append(float(errors.mean()))
        lo, hi = np.percentile(errors, [2.5, 97.5])
        lows.append(float(lo))
        highs.append(float(hi))
    return ErrorCurve(
        sizes=tuple(sizes),
        mean_abs_error=tuple(means),
        ci_low=tuple(lows),
        ci_high=tuple(highs),
        ground_truth=float(truth),
        n_subsamples=n_subsamples,
    )


def _crossing_size(curve: ErrorCurve, target: float) -> float:
    for i, err in enumerate(curve.mean_abs_error):
        if err <= target:
            if i == 0:
                return float(curve.sizes[0])
            prev_err = curve.mean_abs_error[i - 1]
            prev_size, size = curve.sizes[i - 1], curve.sizes[i]
            return prev_size + (size - prev_size) * (prev_err - target) / (prev_err - err)
    raise UnreachableTargetError(f"target error {target} not reached (min {min(curve.mean_abs_error)})")


def sample_savings(curve_coupled: ErrorCurve, curve_independent: ErrorCurve, target_error: float) -> float:
    """Fraction of samples saved by the coupled regime at matched error.

    Interpolates each curve to the smallest size whose mean error reaches
    the target and returns ``1 - n_coupled / n_independent``.
    """
    if curve_coupled.sizes != curve_independent.sizes:
        raise ConfigurationError("curves were computed on different size grids")
    n_coupled = _crossing_size(curve_coupled, target_error)
    n_independent = _crossing_size(curve_independent, target_error)
    return 1.0 - n_coupled / n_independent
