"""
Assignment rules: which arm the next unit receives, given the history so far.
"""
import logging
import math
from typing import Annotated, Callable, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, field_validator
from scipy.special import ndtri

from bmalab.core import record_outcome
from bmalab.errors import InvalidInputError
from bmalab.models import FROZEN, CellStats

logger = logging.getLogger(__name__)

UniformDraw = Callable[[], float]


# ----------------------------
# Policy specs
# ----------------------------
class RCTPolicy(BaseModel):
    kind: Literal["rct"] = "rct"
    probabilities: List[PositiveFloat] = Field(default_factory=lambda: [0.5, 0.5], min_length=1)

    model_config = FROZEN

    @field_validator("probabilities")
    @classmethod
    def _is_distribution(cls, v: List[float]) -> List[float]:
        if not math.isclose(math.fsum(v), 1.0, abs_tol=1e-9):
            raise ValueError(f"probabilities must sum to 1, got {math.fsum(v)}")
        return v

    @property
    def n_arms(self) -> int:
        return len(self.probabilities)


class AlternatingPolicy(BaseModel):
    """Deterministic round robin: arm (t - 1) mod K at step t."""

    kind: Literal["alternating"] = "alternating"
    arms: PositiveInt = 2

    model_config = FROZEN

    @property
    def n_arms(self) -> int:
        return self.arms


class EpsilonGreedyPolicy(BaseModel):
    kind: Literal["epsilon_greedy"] = "epsilon_greedy"
    epsilon0: PositiveFloat = 1.0
    # decay below 1 keeps sum(eps_i) divergent
    decay: float = Field(default=0.5, ge=0.0, lt=1.0)
    arms: PositiveInt = 2

    model_config = FROZEN

    @property
    def n_arms(self) -> int:
        return self.arms

    def epsilon(self, t: int) -> float:
        return min(1.0, self.epsilon0 * t ** (-self.decay))


class ThompsonPolicy(BaseModel):
    """Gaussian Thompson sampling with its own reference prior, independent of the BMA sources."""

    kind: Literal["thompson"] = "thompson"
    prior_mean: float = 0.0
    prior_precision: PositiveFloat = 1e-6
    noise_variance: PositiveFloat = 1.0
    arms: PositiveInt = 2

    model_config = FROZEN

    @property
    def n_arms(self) -> int:
        return self.arms


class UCBPolicy(BaseModel):
    kind: Literal["ucb"] = "ucb"
    rho: PositiveFloat = 1.0
    arms: PositiveInt = 2

    model_config = FROZEN

    @property
    def n_arms(self) -> int:
        return self.arms


PolicySpec = Annotated[
    Union[RCTPolicy, AlternatingPolicy, EpsilonGreedyPolicy, ThompsonPolicy, UCBPolicy],
    Field(discriminator="kind"),
]

NON_ADAPTIVE = (RCTPolicy, AlternatingPolicy)


def is_adaptive(spec) -> bool:
    return not isinstance(spec, NON_ADAPTIVE)


# ----------------------------
# History
# ----------------------------
class ArmHistory(NamedTuple):
    arms: Tuple[CellStats, ...]

    @classmethod
    def empty(cls, n_arms: int) -> "ArmHistory":
        return cls(tuple(CellStats() for _ in range(n_arms)))

    def record(self, arm: int, y: float) -> "ArmHistory":
        arms = list(self.arms)
        arms[arm] = record_outcome(arms[arm], y)
        return ArmHistory(tuple(arms))

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(s.count for s in self.arms)


def _argmax_lowest(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _point_mass(arm: int, n_arms: int) -> np.ndarray:
    probs = np.zeros(n_arms)
    probs[arm] = 1.0
    return probs


def _empirical_index(stats: CellStats) -> float:
    # unseen arms tie as best
    return math.inf if stats.count == 0 else stats.outcome_sum / stats.count


# ----------------------------
# Operations
# ----------------------------
def assignment_probabilities(spec, history: ArmHistory, t: int, rng_draw: UniformDraw) -> np.ndarray:
    if t < 1:
        raise InvalidInputError(f"Step index must be >= 1, got {t}")
    k = spec.n_arms
    if len(history.arms) != k:
        raise InvalidInputError(f"History has {len(history.arms)} arms, policy expects {k}")

    if isinstance(spec, RCTPolicy):
        return np.asarray(spec.probabilities, dtype=float)

    if isinstance(spec, AlternatingPolicy):
        return _point_mass((t - 1) % k, k)

    if isinstance(spec, EpsilonGreedyPolicy):
        eps = spec.epsilon(t)
        best = _argmax_lowest([_empirical_index(s) for s in history.arms])
        probs = np.full(k, eps / k)
        probs[best] += 1.0 - eps
        return probs

    if isinstance(spec, ThompsonPolicy):
        draws = []
        for s in history.arms:
            precision = spec.prior_precision + s.count / spec.noise_variance
            mean = (spec.prior_precision * spec.prior_mean + s.outcome_sum / spec.noise_variance) / precision
            draws.append(mean + float(ndtri(rng_draw())) / math.sqrt(precision))
        return _point_mass(_argmax_lowest(draws), k)

    if isinstance(spec, UCBPolicy):
        log_t = math.log(t)
        index = [
            math.inf if s.count == 0 else s.outcome_sum / s.count + spec.rho * math.sqrt(2.0 * log_t / s.count)
            for s in history.arms
        ]
        return _point_mass(_argmax_lowest(index), k)

    raise InvalidInputError(f"Unknown policy {spec!r}")


def sample_assignment(probs: Sequence[float], u: float) -> int:
    cumulative = np.cumsum(probs)
    return int(min(np.searchsorted(cumulative, u, side="right"), len(cumulative) - 1))


class ExplorationDiagnostic(NamedTuple):
    partial_sum: float
    quarter_sum: float
    growth_ok: bool
    method: str = "doubling heuristic"


def _empirical_arm_sums(spec, horizon: int, replications: int, arm_means: Sequence[float], seed: int) -> np.ndarray:
    """Lower envelope over simulated runs of each arm's cumulative assignment count."""
    k = spec.n_arms
    envelope = None
    for r in range(replications):
        rng = np.random.default_rng([seed, r])
        history = ArmHistory.empty(k)
        hits = np.zeros((horizon, k))
        for t in range(1, horizon + 1):
            probs = assignment_probabilities(spec, history, t, rng.random)
            arm = sample_assignment(probs, rng.random())
            hits[t - 1, arm] = 1.0
            history = history.record(arm, float(rng.normal(arm_means[arm], 1.0)))
        sums = np.cumsum(hits, axis=0)
        envelope = sums if envelope is None else np.minimum(envelope, sums)
    return envelope


def check_exploration_divergence(
    spec,
    horizon: int,
    replications: int = 50,
    arm_means: Optional[Sequence[float]] = None,
    seed: int = 0,
) -> ExplorationDiagnostic:
    """
    Finite-horizon proxy for divergent assignment sums.

    growth_ok holds when the smallest per-arm partial sum at `horizon` more than
    doubles its value at horizon // 4. This is a heuristic: divergence itself
    cannot be observed at a finite horizon.
    """
    if horizon < 100:
        raise InvalidInputError(f"horizon must be >= 100, got {horizon}")
    if replications < 1:
        raise InvalidInputError(f"replications must be >= 1, got {replications}")
    k = spec.n_arms
    steps = np.arange(1, horizon + 1, dtype=float)

    if isinstance(spec, RCTPolicy):
        per_step = np.tile(np.asarray(spec.probabilities, dtype=float), (horizon, 1))
        sums = np.cumsum(per_step, axis=0)
    elif isinstance(spec, EpsilonGreedyPolicy):
        eps = np.minimum(1.0, spec.epsilon0 * steps ** (-spec.decay))
        sums = np.repeat(np.cumsum(eps / k)[:, None], k, axis=1)
    else:
        means = list(arm_means) if arm_means is not None else [0.0] * k
        sums = _empirical_arm_sums(spec, horizon, replications, means, seed)

    partial = float(sums[horizon - 1].min())
    quarter = float(sums[horizon // 4 - 1].min())
    result = ExplorationDiagnostic(partial, quarter, partial > 2.0 * quarter)
    logger.debug("Exploration check for %s: %s", spec.kind, result)
    return result
