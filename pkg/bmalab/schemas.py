from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from bmalab import config
from bmalab.errors import ConfigError
from bmalab.models import CellSources, WorkingModel
from bmalab.policies import AlternatingPolicy, PolicySpec
from bmalab.simulate import DesignPoint, Environment, build_reference_model


# ----------------------------
# Design documents
# ----------------------------
class ReferenceDesignConfig(BaseModel):
    kind: Literal["reference"] = "reference"
    model_id: Literal["model1", "model2", "model3"]
    e_grid: List[PositiveFloat] = Field(default_factory=lambda: list(config.REFERENCE_E_GRID), min_length=1)
    horizon_grid: List[PositiveInt] = Field(default_factory=lambda: list(config.REFERENCE_T_GRID), min_length=1)
    assignment: Literal["alternating", "rct"] = "alternating"
    checkpoints: List[PositiveInt] = Field(default_factory=lambda: list(config.REFERENCE_T_GRID))

    model_config = {"extra": "forbid"}

    @field_validator("horizon_grid")
    @classmethod
    def _even(cls, v: List[int]) -> List[int]:
        odd = [t for t in v if t % 2]
        if odd:
            raise ValueError(f"reference designs need even horizons, got {odd}")
        return v


class CustomDesignConfig(BaseModel):
    kind: Literal["custom"] = "custom"
    design_id: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    horizon_grid: List[PositiveInt] = Field(min_length=1)
    environment: Environment
    sources: List[CellSources] = Field(min_length=1)
    policy: PolicySpec = Field(default_factory=AlternatingPolicy)
    working_model: WorkingModel = Field(default_factory=WorkingModel)
    prior_model_probs: Optional[List[NonNegativeFloat]] = None
    checkpoints: List[PositiveInt] = Field(default_factory=list)

    model_config = {"extra": "forbid"}


DesignConfig = Annotated[Union[ReferenceDesignConfig, CustomDesignConfig], Field(discriminator="kind")]


class DiagnosticsConfig(BaseModel):
    divergence_horizon: PositiveInt = config.DIVERGENCE_HORIZON
    divergence_replications: PositiveInt = 50
    pac_epsilons: List[float] = Field(default_factory=lambda: [0.1])
    pac_accelerations: List[float] = Field(default_factory=lambda: [1.0])
    use_ell: bool = False

    model_config = {"extra": "forbid"}

    @field_validator("divergence_horizon")
    @classmethod
    def _long_enough(cls, v: int) -> int:
        if v < 100:
            raise ValueError("divergence_horizon must be >= 100")
        return v

    @field_validator("pac_epsilons")
    @classmethod
    def _epsilons(cls, v: List[float]) -> List[float]:
        if any(not 0 < e < 1 for e in v):
            raise ValueError("every epsilon must lie in (0, 1)")
        return v

    @field_validator("pac_accelerations")
    @classmethod
    def _accelerations(cls, v: List[float]) -> List[float]:
        if any(not 0 < a <= 1 for a in v):
            raise ValueError("every acceleration must lie in (0, 1]")
        return v


class RunConfig(BaseModel):
    designs: List[DesignConfig] = Field(min_length=1)
    replications: PositiveInt = config.REPLICATIONS
    base_seed: int = Field(default=config.BASE_SEED, ge=0, lt=2 ** 64)
    parallelism: PositiveInt = config.PARALLELISM
    output_dir: Path = config.OUTPUT_DIR
    output_formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv"], min_length=1)
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _unique_ids(self):
        ids = [d.design_id for d in self.designs if isinstance(d, CustomDesignConfig)]
        if len(ids) != len(set(ids)):
            raise ValueError("custom design_id values must be unique")
        return self


# ----------------------------
# Parsing
# ----------------------------
def parse_config(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError.from_validation_error(exc) from exc


def load_config(path: Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}", paths=["<file>"]) from exc
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    return cfg.model_dump_json(indent=2)


def apply_overrides(
    cfg: RunConfig,
    out_dir: Optional[Path] = None,
    parallelism: Optional[int] = None,
    seed: Optional[int] = None,
    reps: Optional[int] = None,
) -> RunConfig:
    """CLI flags take precedence over the document; the result is re-validated."""
    data = cfg.model_dump()
    if out_dir is not None:
        data["output_dir"] = out_dir
    if parallelism is not None:
        data["parallelism"] = parallelism
    if seed is not None:
        data["base_seed"] = seed
    if reps is not None:
        data["replications"] = reps
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError.from_validation_error(exc) from exc


def _custom_point(design: CustomDesignConfig, T: int, cfg: RunConfig) -> DesignPoint:
    return DesignPoint(
        design_id=f"{design.design_id}_T{T}",
        model_id="custom",
        horizon=T,
        environment=design.environment,
        sources=design.sources,
        policy=design.policy,
        replications=cfg.replications,
        base_seed=cfg.base_seed,
        working_model=design.working_model,
        prior_model_probs=design.prior_model_probs,
        checkpoints=[c for c in design.checkpoints if c <= T],
    )


def design_series(cfg: RunConfig) -> List[Tuple[str, List[DesignPoint]]]:
    """
    Group grid points into series that differ only in the horizon.

    Reference designs give one series per (model, e); custom designs one series each.
    Horizons keep document order.
    """
    series = []
    try:
        for design in cfg.designs:
            if isinstance(design, ReferenceDesignConfig):
                for e in design.e_grid:
                    points = [
                        build_reference_model(
                            design.model_id,
                            e,
                            T,
                            replications=cfg.replications,
                            base_seed=cfg.base_seed,
                            assignment=design.assignment,
                            checkpoints=design.checkpoints,
                        )
                        for T in design.horizon_grid
                    ]
                    series.append((f"{design.model_id}_e{e:g}", points))
            else:
                series.append((design.design_id, [_custom_point(design, T, cfg) for T in design.horizon_grid]))
    except ValidationError as exc:
        raise ConfigError.from_validation_error(exc) from exc
    return series


def expand_designs(cfg: RunConfig) -> List[DesignPoint]:
    """One DesignPoint per (design, e, T) grid point, in document order."""
    return [point for _, points in design_series(cfg) for point in points]
