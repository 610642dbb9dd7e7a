"""
Bayesian model averaging over prior evidence sources.

Each source is a Gaussian prior on the cell mean. Under a Gaussian working
likelihood with known variance the source posteriors are conjugate, and the
source-dependent part of each marginal likelihood is a normal density of the
sample mean, so all model weights are computed in closed form in log space.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from bmalab.errors import EmptyCellError, InvalidInputError
from bmalab.models import CellStats, SourcePrior, WorkingModel

# exponent constant used for the biased-weight ceiling
DECAY_CONSTANT = 0.25


class SourcePosterior(NamedTuple):
    mean: float
    precision: float


class EVInputs(NamedTuple):
    bias: float
    p: float


@dataclass(frozen=True)
class WeightVector:
    weights: Tuple[float, ...]
    log_kernels: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def posterior_mean(stats: CellStats, source: SourcePrior, model: WorkingModel, nu: float) -> SourcePosterior:
    if nu <= 0:
        raise InvalidInputError(f"Prior precision must be positive, got {nu}")
    if stats.count == 0:
        return SourcePosterior(source.prior_mean, nu)
    data_precision = stats.count / model.variance
    precision = data_precision + nu
    mean = (stats.outcome_sum / model.variance + nu * source.prior_mean) / precision
    return SourcePosterior(mean, precision)


def log_marginal_kernel(stats: CellStats, prior_mean: float, nu: float, model: WorkingModel) -> float:
    """
    log phi(m_t; prior_mean, sigma^2/N + 1/nu).

    The factor shared by every source is dropped; it cancels in the weights.
    """
    if stats.count == 0:
        raise EmptyCellError("No observations in cell; marginal kernel is undefined")
    if nu <= 0:
        raise InvalidInputError(f"Prior precision must be positive, got {nu}")
    v = model.variance / stats.count + 1.0 / nu
    return float(norm.logpdf(stats.outcome_sum / stats.count, loc=prior_mean, scale=math.sqrt(v)))


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_probs(prior_model_probs: Sequence[float], n: int) -> np.ndarray:
    probs = np.asarray(prior_model_probs, dtype=float)
    if probs.shape != (n,):
        raise InvalidInputError(f"Expected {n} prior model probabilities, got {probs.shape[0]}")
    if np.any(probs < 0) or not math.isclose(math.fsum(probs), 1.0, abs_tol=1e-9):
        raise InvalidInputError("Prior model probabilities must be non-negative and sum to 1")
    return probs


def model_weights(
    stats: CellStats,
    sources: Sequence[SourcePrior],
    model: WorkingModel,
    nus: Sequence[float],
    prior_model_probs: Optional[Sequence[float]] = None,
) -> WeightVector:
    if not sources:
        raise InvalidInputError("At least one source is required")
    if len(nus) != len(sources):
        raise InvalidInputError(f"Got {len(nus)} precisions for {len(sources)} sources")
    n = len(sources)
    probs = _uniform(n) if prior_model_probs is None else _check_probs(prior_model_probs, n)

    if stats.count == 0:
        return WeightVector(tuple(float(p) for p in probs), tuple(0.0 for _ in sources))

    kernels = np.array(
        [log_marginal_kernel(stats, s.prior_mean, nu, model) for s, nu in zip(sources, nus)]
    )
    with np.errstate(divide="ignore"):
        log_post = np.log(probs) + kernels
    weights = np.exp(log_post - logsumexp(log_post))
    return WeightVector(tuple(float(w) for w in weights), tuple(float(k) for k in kernels))


def bma_estimate(weights: WeightVector, posteriors: Sequence[SourcePosterior]) -> float:
    if len(weights) != len(posteriors):
        raise InvalidInputError(f"{len(weights)} weights for {len(posteriors)} posteriors")
    return math.fsum(w * post.mean for w, post in zip(weights.weights, posteriors))


def source_bias(truth: float, source: SourcePrior) -> float:
    return truth - source.prior_mean


# ----------------------------
# External-validity index and asymptotic predictions
# ----------------------------
def ev_index(inputs: EVInputs) -> float:
    if not inputs.p > 0:
        raise InvalidInputError(f"EV precision must be positive, got {inputs.p}")
    return -inputs.p * inputs.bias ** 2 + math.log(inputs.p)


def predicted_log_odds(s: EVInputs, s2: EVInputs) -> float:
    return 0.5 * (ev_index(s) - ev_index(s2))


def predicted_weights(inputs: Sequence[EVInputs], prior_model_probs: Optional[Sequence[float]] = None) -> np.ndarray:
    """Leading-order asymptotic weights: proportional to exp(E/2)."""
    if not inputs:
        raise InvalidInputError("At least one source is required")
    n = len(inputs)
    probs = _uniform(n) if prior_model_probs is None else _check_probs(prior_model_probs, n)
    with np.errstate(divide="ignore"):
        log_post = np.log(probs) + 0.5 * np.array([ev_index(i) for i in inputs])
    return np.exp(log_post - logsumexp(log_post))


def limiting_unbiased_log_odds(c_u: float, c_u2: float) -> float:
    if c_u <= 0 or c_u2 <= 0:
        raise InvalidInputError("Both precision limits must be positive")
    return 0.5 * math.log(c_u / c_u2)


def predicted_weight_bound(
    biased: EVInputs,
    nu_b: float,
    max_unbiased_nu: float,
    diffuse_regime: bool,
) -> float:
    """
    Order-of-magnitude ceiling on a biased source's weight.

    With an unbiased source present the ceiling carries the precision ratio
    prefactor; in the diffuse-only regime it is the exponential term alone.
    """
    if biased.bias == 0:
        raise InvalidInputError("The weight bound only applies to biased sources (bias != 0)")
    if nu_b <= 0 or max_unbiased_nu <= 0:
        raise InvalidInputError("Precisions must be positive")
    decay = math.exp(-DECAY_CONSTANT * nu_b * biased.bias ** 2)
    if diffuse_regime:
        return decay
    return (nu_b / max_unbiased_nu) * decay
