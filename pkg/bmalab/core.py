import math
from typing import Iterable

from bmalab.errors import InvalidInputError
from bmalab.models import (
    CellStats,
    ConstantPrecision,
    FixedAtDesign,
    LinearInArmCount,
    PrecisionLimit,
    SourcePrior,
)

# guards degenerate zero precision
EPS_FLOOR = 1e-6


def record_outcome(stats: CellStats, y: float) -> CellStats:
    if not math.isfinite(y):
        raise InvalidInputError(f"Outcome must be finite, got {y!r}")
    return CellStats(stats.count + 1, stats.outcome_sum + y, stats.outcome_sq_sum + y * y)


def fold_outcomes(ys: Iterable[float]) -> CellStats:
    """
    Build CellStats from a batch of outcomes.

    Uses exactly rounded sums, so any permutation of the same values gives
    bit-identical statistics.
    """
    values = [float(y) for y in ys]
    if not all(math.isfinite(y) for y in values):
        raise InvalidInputError("Outcomes must be finite")
    if not values:
        return CellStats()
    return CellStats(len(values), math.fsum(values), math.fsum(y * y for y in values))


def effective_precision(
    source: SourcePrior,
    stats: CellStats,
    design_horizon: int,
    n_arms: int = 2,
    cell_share: float = 1.0,
) -> float:
    """
    Prior precision nu for one source in one cell.

    `cell_share` is the probability of the cell's covariate value, so a
    FixedAtDesign source is priced at the cell's expected size
    design_horizon * cell_share / n_arms.
    """
    if design_horizon < 1:
        raise InvalidInputError(f"design_horizon must be >= 1, got {design_horizon}")
    if not 0 < cell_share <= 1:
        raise InvalidInputError(f"cell_share must lie in (0, 1], got {cell_share}")
    schedule = source.precision_schedule
    if isinstance(schedule, ConstantPrecision):
        nu = schedule.nu0
    elif isinstance(schedule, LinearInArmCount):
        nu = schedule.rate * stats.count
    elif isinstance(schedule, FixedAtDesign):
        # expected cell size under a balanced design
        nu = schedule.rate * (design_horizon * cell_share / n_arms)
    else:
        raise InvalidInputError(f"Unknown precision schedule {schedule!r}")
    return max(nu, EPS_FLOOR)


def precision_limit(source: SourcePrior, design_horizon: int) -> PrecisionLimit:
    schedule = source.precision_schedule
    if isinstance(schedule, ConstantPrecision):
        return PrecisionLimit(0.0)
    # nu/N equals the rate identically (linear) or at the expected cell size (fixed)
    return PrecisionLimit(float(schedule.rate))
