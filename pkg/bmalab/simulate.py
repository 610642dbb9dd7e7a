"""
Outcome environments, design points and seeded Monte Carlo replication.
"""
import logging
import math
from dataclasses import dataclass
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, NonNegativeFloat, PositiveFloat, PositiveInt, model_validator

from bmalab import config
from bmalab.bma import WeightVector, bma_estimate, model_weights, posterior_mean
from bmalab.core import effective_precision, fold_outcomes, precision_limit
from bmalab.errors import InvalidInputError
from bmalab.models import (
    FROZEN,
    CellKey,
    CellSources,
    CellStats,
    ConstantPrecision,
    FixedAtDesign,
    SourcePrior,
    WorkingModel,
)
from bmalab.policies import (
    AlternatingPolicy,
    ArmHistory,
    PolicySpec,
    RCTPolicy,
    assignment_probabilities,
    is_adaptive,
    sample_assignment,
)
from bmalab.utils.rng import covariate_stream, outcome_stream, policy_stream

logger = logging.getLogger(__name__)

REFERENCE_MODELS = ("model1", "model2", "model3")
ModelId = Literal["model1", "model2", "model3", "custom"]


# ----------------------------
# Outcome distributions
# ----------------------------
class GaussianOutcome(BaseModel):
    kind: Literal["gaussian"] = "gaussian"
    mean: float
    sd: PositiveFloat = 1.0

    model_config = FROZEN

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size)


class BernoulliOutcome(BaseModel):
    kind: Literal["bernoulli"] = "bernoulli"
    mean: float = Field(ge=0.0, le=1.0)

    model_config = FROZEN

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return (rng.random(size) < self.mean).astype(float)


class ShiftedLogNormalOutcome(BaseModel):
    """exp(shape * Z) shifted so that its mean is exactly `mean`."""

    kind: Literal["shifted_lognormal"] = "shifted_lognormal"
    mean: float
    shape: PositiveFloat = 1.0

    model_config = FROZEN

    @property
    def shift(self) -> float:
        return self.mean - math.exp(self.shape ** 2 / 2.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.lognormal(0.0, self.shape, size) + self.shift


class ConstantOutcome(BaseModel):
    """Zero-variance outcomes; test environments only."""

    kind: Literal["constant"] = "constant"
    mean: float

    model_config = FROZEN

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.mean))


OutcomeDistribution = Annotated[
    Union[GaussianOutcome, BernoulliOutcome, ShiftedLogNormalOutcome, ConstantOutcome],
    Field(discriminator="kind"),
]


class Environment(BaseModel):
    # outcomes[d][x]
    outcomes: List[List[OutcomeDistribution]] = Field(min_length=1)
    covariate_probs: Optional[List[PositiveFloat]] = None

    model_config = FROZEN

    @model_validator(mode="after")
    def _rectangular(self):
        widths = {len(row) for row in self.outcomes}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("every arm needs the same, non-zero number of covariate cells")
        if self.covariate_probs is not None:
            if len(self.covariate_probs) != self.n_covariates:
                raise ValueError("covariate_probs must have one entry per covariate")
            if not math.isclose(math.fsum(self.covariate_probs), 1.0, abs_tol=1e-9):
                raise ValueError("covariate_probs must sum to 1")
        return self

    @property
    def n_arms(self) -> int:
        return len(self.outcomes)

    @property
    def n_covariates(self) -> int:
        return len(self.outcomes[0])

    def cells(self) -> List[CellKey]:
        return [CellKey(d, x) for d in range(self.n_arms) for x in range(self.n_covariates)]

    def distribution(self, cell: CellKey):
        return self.outcomes[cell.treatment][cell.covariate]

    def truth(self, cell: CellKey) -> float:
        return float(self.distribution(cell).mean)

    def covariate_share(self, covariate: int) -> float:
        if self.covariate_probs is None:
            return 1.0 / self.n_covariates
        return float(self.covariate_probs[covariate])


# ----------------------------
# Design points
# ----------------------------
class DesignPoint(BaseModel):
    design_id: str
    model_id: ModelId = "custom"
    e: Optional[NonNegativeFloat] = None
    horizon: PositiveInt
    environment: Environment
    sources: List[CellSources] = Field(min_length=1)
    policy: PolicySpec = Field(default_factory=AlternatingPolicy)
    replications: PositiveInt = config.REPLICATIONS
    base_seed: int = Field(default=config.BASE_SEED, ge=0, lt=2 ** 64)
    working_model: WorkingModel = Field(default_factory=WorkingModel)
    prior_model_probs: Optional[List[NonNegativeFloat]] = None
    checkpoints: List[PositiveInt] = Field(default_factory=list)

    model_config = FROZEN

    @model_validator(mode="after")
    def _consistent(self):
        env_cells = set(self.environment.cells())
        src_cells = [s.key for s in self.sources]
        if len(set(src_cells)) != len(src_cells):
            raise ValueError("each cell may appear only once in sources")
        if set(src_cells) != env_cells:
            raise ValueError(f"sources must cover exactly the environment cells {sorted(env_cells)}")
        n_sources = {len(s.priors) for s in self.sources}
        if len(n_sources) != 1:
            raise ValueError("every cell needs the same number of sources")
        if self.policy.n_arms != self.environment.n_arms:
            raise ValueError(
                f"policy has {self.policy.n_arms} arms, environment has {self.environment.n_arms}"
            )
        if self.prior_model_probs is not None:
            if len(self.prior_model_probs) != n_sources.pop():
                raise ValueError("prior_model_probs needs one entry per source")
            if not math.isclose(math.fsum(self.prior_model_probs), 1.0, abs_tol=1e-9):
                raise ValueError("prior_model_probs must sum to 1")
        if self.model_id in REFERENCE_MODELS and self.horizon % 2:
            raise ValueError(f"reference designs need an even horizon, got {self.horizon}")
        return self

    @property
    def n_sources(self) -> int:
        return len(self.sources[0].priors)

    def priors_for(self, cell: CellKey) -> List[SourcePrior]:
        for s in self.sources:
            if s.key == cell:
                return s.priors
        raise InvalidInputError(f"No sources for cell {cell}")

    def source_labels(self) -> List[str]:
        return [p.label or f"source{i}" for i, p in enumerate(self.sources[0].priors)]


# ----------------------------
# Results
# ----------------------------
@dataclass(frozen=True)
class Checkpoint:
    step: int
    count: int
    weights: Tuple[float, ...]
    nus: Tuple[float, ...]


@dataclass(frozen=True)
class CellResult:
    cell: CellKey
    count: int
    truth: float
    standard_estimate: Optional[float]
    bma_estimate: float
    weights: WeightVector
    posterior_means: Tuple[float, ...]
    nus: Tuple[float, ...]
    prior_means: Tuple[float, ...]
    c_values: Tuple[float, ...]
    labels: Tuple[str, ...]
    trajectory: Tuple[Checkpoint, ...] = ()

    @property
    def empty(self) -> bool:
        return self.count == 0

    @property
    def biases(self) -> Tuple[float, ...]:
        return tuple(self.truth - m for m in self.prior_means)

    @property
    def unbiased_mask(self) -> Tuple[bool, ...]:
        return tuple(abs(b) <= 1e-12 for b in self.biases)


@dataclass(frozen=True)
class ReplicationResult:
    rep_index: int
    cells: Tuple[CellResult, ...]

    def cell(self, key: CellKey) -> CellResult:
        for c in self.cells:
            if c.cell == key:
                return c
        raise KeyError(key)


# ----------------------------
# Reference models
# ----------------------------
REFERENCE_ARM_MEANS = (1.0, 1.3)
BIAS_SHIFT = 1.0
DIFFUSE_NU = 1.0


def _reference_sources(model_id: str, theta: float, e: float) -> List[SourcePrior]:
    diffuse = SourcePrior(
        prior_mean=theta,
        precision_schedule=ConstantPrecision(nu0=DIFFUSE_NU),
        diffuse_cap=DIFFUSE_NU,
        label="diffuse",
    )
    unbiased = SourcePrior(prior_mean=theta, precision_schedule=FixedAtDesign(rate=e), label="unbiased")
    biased = SourcePrior(
        prior_mean=theta + BIAS_SHIFT, precision_schedule=FixedAtDesign(rate=e), label="biased"
    )
    return {
        "model1": [diffuse, unbiased],
        "model2": [diffuse, biased],
        "model3": [diffuse, unbiased, biased],
    }[model_id]


def build_reference_model(
    model_id: str,
    e: float,
    T: int,
    replications: int = config.REPLICATIONS,
    base_seed: int = config.BASE_SEED,
    assignment: str = "alternating",
    checkpoints: Sequence[int] = (),
) -> DesignPoint:
    if model_id not in REFERENCE_MODELS:
        raise InvalidInputError(f"Unknown model_id '{model_id}'. Allowed: {', '.join(REFERENCE_MODELS)}")
    if assignment == "alternating":
        policy = AlternatingPolicy(arms=2)
    elif assignment == "rct":
        policy = RCTPolicy(probabilities=[0.5, 0.5])
    else:
        raise InvalidInputError(f"Unknown assignment '{assignment}'")

    environment = Environment(outcomes=[[GaussianOutcome(mean=m, sd=1.0)] for m in REFERENCE_ARM_MEANS])
    sources = [
        CellSources(treatment=d, covariate=0, priors=_reference_sources(model_id, theta, e))
        for d, theta in enumerate(REFERENCE_ARM_MEANS)
    ]
    return DesignPoint(
        design_id=f"{model_id}_e{e:g}_T{T}",
        model_id=model_id,
        e=e,
        horizon=T,
        environment=environment,
        sources=sources,
        policy=policy,
        replications=replications,
        base_seed=base_seed,
        checkpoints=[c for c in checkpoints if c <= T],
    )


# ----------------------------
# Replication
# ----------------------------
def _draw_covariates(design: DesignPoint, rep_index: int) -> np.ndarray:
    env = design.environment
    if env.n_covariates == 1:
        return np.zeros(design.horizon, dtype=int)
    probs = env.covariate_probs or [1.0 / env.n_covariates] * env.n_covariates
    u = covariate_stream(design.base_seed, rep_index).random(design.horizon)
    return np.minimum(np.searchsorted(np.cumsum(probs), u, side="right"), env.n_covariates - 1)


def _assign(
    design: DesignPoint,
    covariates: np.ndarray,
    draws: Dict[CellKey, np.ndarray],
    rep_index: int,
) -> np.ndarray:
    policy = design.policy
    k = policy.n_arms
    T = design.horizon
    rng = policy_stream(design.base_seed, rep_index)

    if not is_adaptive(policy):
        if isinstance(policy, AlternatingPolicy):
            return np.arange(T) % k
        u = rng.random(T)
        return np.minimum(np.searchsorted(np.cumsum(policy.probabilities), u, side="right"), k - 1)

    # history-dependent: strictly sequential, one history per covariate value
    histories = {x: ArmHistory.empty(k) for x in range(design.environment.n_covariates)}
    arrivals = {cell: 0 for cell in draws}
    assignments = np.empty(T, dtype=int)
    for t in range(1, T + 1):
        x = int(covariates[t - 1])
        probs = assignment_probabilities(policy, histories[x], t, rng.random)
        d = sample_assignment(probs, rng.random())
        cell = CellKey(d, x)
        y = float(draws[cell][arrivals[cell]])
        arrivals[cell] += 1
        histories[x] = histories[x].record(d, y)
        assignments[t - 1] = d
    return assignments


def _cell_weights(design: DesignPoint, cell: CellKey, priors: List[SourcePrior], stats: CellStats, horizon: int):
    env = design.environment
    share = env.covariate_share(cell.covariate)
    nus = [effective_precision(p, stats, horizon, env.n_arms, share) for p in priors]
    weights = model_weights(stats, priors, design.working_model, nus, design.prior_model_probs)
    return nus, weights


def _estimate_cell(
    design: DesignPoint,
    cell: CellKey,
    mask: np.ndarray,
    cell_draws: np.ndarray,
) -> CellResult:
    priors = design.priors_for(cell)
    n = int(mask.sum())
    stats = fold_outcomes(cell_draws[:n])
    nus, weights = _cell_weights(design, cell, priors, stats, design.horizon)
    posteriors = [posterior_mean(stats, p, design.working_model, nu) for p, nu in zip(priors, nus)]

    # each checkpoint is priced as if the run had stopped there
    trajectory = []
    for step in design.checkpoints:
        if step > design.horizon:
            continue
        n_c = int(mask[:step].sum())
        nus_c, weights_c = _cell_weights(design, cell, priors, fold_outcomes(cell_draws[:n_c]), step)
        trajectory.append(Checkpoint(step, n_c, weights_c.weights, tuple(nus_c)))

    return CellResult(
        cell=cell,
        count=n,
        truth=design.environment.truth(cell),
        standard_estimate=stats.sample_mean,
        bma_estimate=bma_estimate(weights, posteriors),
        weights=weights,
        posterior_means=tuple(p.mean for p in posteriors),
        nus=tuple(nus),
        prior_means=tuple(p.prior_mean for p in priors),
        c_values=tuple(precision_limit(p, design.horizon).c for p in priors),
        labels=tuple(design.source_labels()),
        trajectory=tuple(trajectory),
    )


def run_replication(design: DesignPoint, rep_index: int) -> ReplicationResult:
    if not 0 <= rep_index < design.replications:
        raise InvalidInputError(f"rep_index {rep_index} outside [0, {design.replications})")
    env = design.environment
    T = design.horizon

    # at most T outcomes can land in any one cell
    draws = {
        cell: env.distribution(cell).sample(outcome_stream(design.base_seed, rep_index, *cell), T)
        for cell in env.cells()
    }
    covariates = _draw_covariates(design, rep_index)
    assignments = _assign(design, covariates, draws, rep_index)

    cells = []
    for cell in env.cells():
        mask = (assignments == cell.treatment) & (covariates == cell.covariate)
        result = _estimate_cell(design, cell, mask, draws[cell])
        if result.empty:
            logger.warning("Cell %s empty at T=%s in %s rep %s", cell.label(), T, design.design_id, rep_index)
        cells.append(result)
    return ReplicationResult(rep_index=rep_index, cells=tuple(cells))


def run_design(design: DesignPoint, parallelism: int = 1) -> List[ReplicationResult]:
    if parallelism < 1:
        raise InvalidInputError(f"parallelism must be >= 1, got {parallelism}")
    logger.info(f"Running {design.design_id}: {design.replications} replications, parallelism {parallelism}")
    if parallelism == 1:
        results = [run_replication(design, r) for r in range(design.replications)]
    else:
        # joblib returns results in submission order
        results = Parallel(n_jobs=parallelism)(
            delayed(run_replication)(design, r) for r in range(design.replications)
        )
    logger.info(f"Finished {design.design_id}")
    return list(results)
