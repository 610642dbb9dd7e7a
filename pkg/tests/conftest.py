import pytest

from bmalab import config
from bmalab.analysis import summarize_design
from bmalab.models import CellSources, ConstantPrecision, FixedAtDesign, SourcePrior
from bmalab.simulate import REFERENCE_MODELS, DesignPoint, Environment, GaussianOutcome, build_reference_model, run_design

FULL_REPLICATIONS = 1000


@pytest.fixture(scope="session")
def reference_summaries():
    """{(model_id, e, T): DesignSummary} for the full reference grid at 1000 replications."""
    out = {}
    for model_id in REFERENCE_MODELS:
        for e in config.REFERENCE_E_GRID:
            for T in config.REFERENCE_T_GRID:
                design = build_reference_model(model_id, e, T, replications=FULL_REPLICATIONS, base_seed=config.BASE_SEED)
                out[(model_id, e, T)] = summarize_design(run_design(design, config.PARALLELISM))
    return out


def two_source_sources(theta_by_arm, shift=0.0, rate=1.0):
    """Diffuse + informative source per arm; the informative one is centered at theta + shift."""
    return [
        CellSources(
            treatment=d,
            priors=[
                SourcePrior(
                    prior_mean=theta,
                    precision_schedule=ConstantPrecision(nu0=1.0),
                    diffuse_cap=1.0,
                    label="diffuse",
                ),
                SourcePrior(
                    prior_mean=theta + shift,
                    precision_schedule=FixedAtDesign(rate=rate),
                    label="informative",
                ),
            ],
        )
        for d, theta in enumerate(theta_by_arm)
    ]


@pytest.fixture
def small_design():
    def _make(horizon=20, replications=5, base_seed=7, **kwargs):
        means = (1.0, 1.3)
        return DesignPoint(
            design_id=f"small_T{horizon}",
            horizon=horizon,
            environment=Environment(outcomes=[[GaussianOutcome(mean=m)] for m in means]),
            sources=two_source_sources(means),
            replications=replications,
            base_seed=base_seed,
            **kwargs,
        )

    return _make
