import math
from typing import Annotated, List, Literal, NamedTuple, Optional, Union

from pydantic import BaseModel, Field, NonNegativeInt, PositiveFloat, field_validator, model_validator

FROZEN = {"frozen": True, "extra": "forbid"}


# ----------------------------
# Cells
# ----------------------------
class CellKey(NamedTuple):
    treatment: int
    covariate: int = 0

    def label(self) -> str:
        return f"d{self.treatment}_x{self.covariate}"


class WorkingModel(BaseModel):
    """Gaussian working likelihood; only its variance is configurable."""

    variance: PositiveFloat = 1.0

    model_config = FROZEN


# ----------------------------
# Precision schedules
# ----------------------------
class ConstantPrecision(BaseModel):
    kind: Literal["constant"] = "constant"
    nu0: PositiveFloat

    model_config = FROZEN


class LinearInArmCount(BaseModel):
    """nu_t = rate * N_t(d,x)."""

    kind: Literal["linear_in_arm_count"] = "linear_in_arm_count"
    rate: PositiveFloat

    model_config = FROZEN


class FixedAtDesign(BaseModel):
    """nu = rate * (design horizon / number of arms), constant within a run."""

    kind: Literal["fixed_at_design"] = "fixed_at_design"
    rate: PositiveFloat

    model_config = FROZEN


PrecisionSchedule = Annotated[
    Union[ConstantPrecision, LinearInArmCount, FixedAtDesign],
    Field(discriminator="kind"),
]


# ----------------------------
# Sources
# ----------------------------
class SourcePrior(BaseModel):
    prior_mean: float
    precision_schedule: PrecisionSchedule
    diffuse_cap: Optional[PositiveFloat] = None
    label: str = ""

    model_config = FROZEN

    @field_validator("prior_mean")
    @classmethod
    def _finite_mean(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("prior_mean must be finite")
        return v

    @model_validator(mode="after")
    def _diffuse_is_bounded(self):
        if self.diffuse_cap is None:
            return self
        schedule = self.precision_schedule
        if not isinstance(schedule, ConstantPrecision):
            raise ValueError("a diffuse source needs a constant precision schedule")
        if schedule.nu0 > self.diffuse_cap:
            raise ValueError(f"nu0={schedule.nu0} exceeds diffuse_cap={self.diffuse_cap}")
        return self

    @property
    def is_diffuse(self) -> bool:
        return self.diffuse_cap is not None


class CellSources(BaseModel):
    """The prior sources attached to one (treatment, covariate) cell."""

    treatment: NonNegativeInt
    covariate: NonNegativeInt = 0
    priors: List[SourcePrior] = Field(min_length=1)

    model_config = FROZEN

    @property
    def key(self) -> CellKey:
        return CellKey(self.treatment, self.covariate)


# ----------------------------
# Sufficient statistics
# ----------------------------
class CellStats(NamedTuple):
    count: int = 0
    outcome_sum: float = 0.0
    outcome_sq_sum: float = 0.0

    @property
    def sample_mean(self) -> Optional[float]:
        if self.count < 1:
            return None
        return self.outcome_sum / self.count


class PrecisionLimit(NamedTuple):
    c: float
