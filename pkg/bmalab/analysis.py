"""
Post-run statistics: scaled errors, design summaries, acceleration factors,
checkpointed weight trajectories, weight-decay and convergence-rate fits, and
the PAC sample-size calculator.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from bmalab.bma import WeightVector
from bmalab.errors import EmptyUnbiasedSetError, InsufficientDataError, InvalidInputError
from bmalab.models import CellKey
from bmalab.simulate import ReplicationResult

logger = logging.getLogger(__name__)

# type-7 (linear interpolation) quantiles
QUANTILE_METHOD = "linear"
WHISKER_IQR = 1.5

ESTIMATORS = ("bma", "standard")


def scaled_abs_error(estimate: float, truth: float, n: int) -> float:
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    return math.sqrt(n) * abs(estimate - truth)


def theoretical_acceleration(c: float) -> float:
    if c < 0:
        raise InvalidInputError(f"c must be non-negative, got {c}")
    return 1.0 / (1.0 + c)


def standard_scaled_error_mean(sd: float = 1.0) -> float:
    """Mean of sqrt(N)|m - theta| for Gaussian outcomes: the folded-normal mean."""
    return sd * math.sqrt(2.0 / math.pi)


def acceleration_factor(
    weights: WeightVector,
    unbiased_mask: Sequence[bool],
    c_values: Sequence[float],
) -> float:
    alphas = weights.as_array()
    mask = np.asarray(unbiased_mask, dtype=bool)
    c = np.asarray(c_values, dtype=float)
    if not (len(alphas) == len(mask) == len(c)):
        raise InvalidInputError("weights, unbiased_mask and c_values must have equal length")
    if not mask.any():
        raise EmptyUnbiasedSetError("Acceleration factor needs at least one unbiased source")
    w = alphas[mask]
    total = math.fsum(w)
    if total <= 0.0:
        # all unbiased weights underflowed; fall back to an even split
        w = np.ones_like(w)
        total = float(len(w))
    return math.fsum(wi / (1.0 + ci) for wi, ci in zip(w, c[mask])) / total


def error_decomposition_bound(
    weights: WeightVector,
    nus: Sequence[float],
    count: int,
    biases: Sequence[float],
    sample_error: float,
    variance: float = 1.0,
) -> float:
    """
    Triangle-inequality bound on |estimate - truth|:
    sum_s alpha_s [nu_s/(nu_s+N') |bias_s| + N'/(nu_s+N') |m - theta|], N' = count/variance.
    """
    n_eff = count / variance
    return math.fsum(
        a * (nu / (nu + n_eff) * abs(b) + n_eff / (nu + n_eff) * abs(sample_error))
        for a, nu, b in zip(weights.weights, nus, biases)
    )


# ----------------------------
# Design summaries
# ----------------------------
@dataclass(frozen=True)
class ErrorSummary:
    count: int
    mean: float
    q1: float
    median: float
    q3: float
    minimum: float
    maximum: float
    whisker_low: float
    whisker_high: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "ErrorSummary":
        if len(values) == 0:
            nan = float("nan")
            return cls(0, nan, nan, nan, nan, nan, nan, nan, nan)
        arr = np.sort(np.asarray(values, dtype=float))
        q1, median, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method=QUANTILE_METHOD)
        iqr = q3 - q1
        inside = arr[(arr >= q1 - WHISKER_IQR * iqr) & (arr <= q3 + WHISKER_IQR * iqr)]
        return cls(
            count=len(arr),
            mean=math.fsum(arr) / len(arr),
            q1=float(q1),
            median=float(median),
            q3=float(q3),
            minimum=float(arr[0]),
            maximum=float(arr[-1]),
            whisker_low=float(inside.min()),
            whisker_high=float(inside.max()),
        )


@dataclass(frozen=True)
class CellSummary:
    cell: CellKey
    truth: float
    mean_count: float
    errors: Dict[str, ErrorSummary]
    # unscaled, averaged per replication over non-empty cells
    mean_abs_error: Dict[str, float]
    labels: Tuple[str, ...]
    mean_weights: Tuple[float, ...]
    mean_acceleration: Optional[float]
    missing_standard: int


@dataclass(frozen=True)
class DesignSummary:
    replications: int
    cells: Tuple[CellSummary, ...]

    def cell(self, key: CellKey) -> CellSummary:
        for c in self.cells:
            if c.cell == key:
                return c
        raise KeyError(key)

    def mean_alpha(self, key: CellKey, label: str) -> float:
        summary = self.cell(key)
        return summary.mean_weights[summary.labels.index(label)]


def _fmean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _fmean_or_nan(values: Sequence[float]) -> float:
    return _fmean(values) if values else float("nan")


def summarize_design(results: Sequence[ReplicationResult]) -> DesignSummary:
    if not results:
        raise InsufficientDataError("Cannot summarize an empty result list")
    cells = []
    for key in [c.cell for c in results[0].cells]:
        rows = [r.cell(key) for r in results]
        first = rows[0]

        bma_err, std_err = [], []
        bma_abs, std_abs = [], []
        for row in rows:
            if row.count < 1:
                continue
            bma_err.append(scaled_abs_error(row.bma_estimate, row.truth, row.count))
            std_err.append(scaled_abs_error(row.standard_estimate, row.truth, row.count))
            bma_abs.append(abs(row.bma_estimate - row.truth))
            std_abs.append(abs(row.standard_estimate - row.truth))

        n_sources = len(first.labels)
        mean_weights = tuple(_fmean([row.weights.weights[s] for row in rows]) for s in range(n_sources))

        mean_acc = None
        if any(first.unbiased_mask):
            mean_acc = _fmean([acceleration_factor(row.weights, row.unbiased_mask, row.c_values) for row in rows])

        cells.append(
            CellSummary(
                cell=key,
                truth=first.truth,
                mean_count=_fmean([row.count for row in rows]),
                errors={"bma": ErrorSummary.from_values(bma_err), "standard": ErrorSummary.from_values(std_err)},
                mean_abs_error={"bma": _fmean_or_nan(bma_abs), "standard": _fmean_or_nan(std_abs)},
                labels=first.labels,
                mean_weights=mean_weights,
                mean_acceleration=mean_acc,
                missing_standard=sum(1 for row in rows if row.count < 1),
            )
        )
    return DesignSummary(replications=len(results), cells=tuple(cells))


class TrajectoryPoint(NamedTuple):
    step: int
    mean_count: float
    mean_weights: Tuple[float, ...]
    mean_nus: Tuple[float, ...]


def summarize_trajectory(results: Sequence[ReplicationResult], key: CellKey) -> List[TrajectoryPoint]:
    """Replication means of the checkpointed weights and precisions in one cell."""
    if not results:
        raise InsufficientDataError("Cannot summarize an empty result list")
    trajectories = [r.cell(key).trajectory for r in results]
    points = []
    for i, checkpoint in enumerate(trajectories[0]):
        at_step = [t[i] for t in trajectories]
        n_sources = len(checkpoint.weights)
        points.append(
            TrajectoryPoint(
                step=checkpoint.step,
                mean_count=_fmean([c.count for c in at_step]),
                mean_weights=tuple(_fmean([c.weights[s] for c in at_step]) for s in range(n_sources)),
                mean_nus=tuple(_fmean([c.nus[s] for c in at_step]) for s in range(n_sources)),
            )
        )
    return points


# ----------------------------
# Fits
# ----------------------------
class RateFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    axis: Literal["logN", "logN_with_ell", "nu_bias_sq"]
    n_points: int


def _ols(x: np.ndarray, y: np.ndarray, axis: str) -> RateFit:
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(float(slope), float(intercept), r_squared, axis, len(x))


def decay_slope_fit(
    mean_alpha_biased: Sequence[float],
    nu_values: Sequence[float],
    bias: float,
) -> RateFit:
    """OLS of log mean biased weight on nu_b * bias^2, over the leading run of positive weights."""
    if len(mean_alpha_biased) != len(nu_values):
        raise InvalidInputError("One precision per checkpoint is required")
    alphas = []
    for a in mean_alpha_biased:
        if not a > 0:
            break
        alphas.append(a)
    if len(alphas) < 3:
        raise InsufficientDataError(f"Need >= 3 positive weights for a decay fit, got {len(alphas)}")
    x = np.asarray(nu_values[: len(alphas)], dtype=float) * bias ** 2
    y = np.log(np.asarray(alphas, dtype=float))
    return _ols(x, y, "nu_bias_sq")


def rate_regression(
    errors_by_n: Mapping[float, float],
    use_ell: bool = False,
    ell: Callable[[float], float] = math.log,
) -> RateFit:
    """OLS of log mean |error| on log N, or on log(ell(N)/sqrt(N)) when use_ell is set."""
    if len(errors_by_n) < 3:
        raise InsufficientDataError(f"Need >= 3 sample sizes, got {len(errors_by_n)}")
    ns = sorted(errors_by_n)
    errs = np.asarray([errors_by_n[n] for n in ns], dtype=float)
    if np.any(errs <= 0):
        raise InvalidInputError("Mean errors must be positive for a log-log fit")
    if use_ell:
        if min(ns) < 2:
            raise InvalidInputError("The ell axis needs N >= 2")
        x = np.asarray([math.log(ell(n) / math.sqrt(n)) for n in ns])
        return _ols(x, np.log(errs), "logN_with_ell")
    return _ols(np.log(np.asarray(ns, dtype=float)), np.log(errs), "logN")


def pac_sample_size(epsilon: float, acceleration: float = 1.0) -> int:
    if not 0 < epsilon < 1:
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 < acceleration <= 1:
        raise InvalidInputError(f"acceleration must lie in (0, 1], got {acceleration}")
    return max(1, math.ceil(acceleration / epsilon ** 2 * math.log(1.0 / epsilon)))


def mean_errors_by_n(
    summaries: Mapping[int, DesignSummary],
    cell: CellKey,
    estimator: str,
) -> Dict[float, float]:
    """
    Map a horizon-indexed set of summaries to {mean N: mean |error|} for a rate fit.

    The error is averaged unscaled, per replication, so designs whose arm counts
    vary across replications are not biased by dividing a mean by sqrt(mean N).
    """
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"Unknown estimator '{estimator}'")
    out: Dict[float, float] = {}
    for horizon in sorted(summaries):
        cs = summaries[horizon].cell(cell)
        if not cs.mean_count > 0:
            raise InsufficientDataError(f"Cell {cell.label()} never received an observation at horizon {horizon}")
        if cs.mean_count in out:
            raise InvalidInputError(
                f"Horizon {horizon} repeats mean N={cs.mean_count:g} in cell {cell.label()}; a rate fit needs distinct sizes"
            )
        out[cs.mean_count] = cs.mean_abs_error[estimator]
    return out
