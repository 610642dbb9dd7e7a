# bmalab/commands/diagnose.py
"""
Diagnostics over a config's design series.

  rates       log-log error slopes per cell and estimator, with the mean acceleration factor
  decay       log weight of each biased source against nu * bias^2
  divergence  doubling check on the exploration sums of each series' policy
  pac         sample sizes for the configured (epsilon, acceleration) pairs
"""
import logging
import math
from typing import Dict, List, Tuple

from bmalab.analysis import (
    ESTIMATORS,
    DesignSummary,
    decay_slope_fit,
    mean_errors_by_n,
    pac_sample_size,
    rate_regression,
    summarize_design,
    theoretical_acceleration,
)
from bmalab.bma import source_bias
from bmalab.errors import EmptyUnbiasedSetError, InsufficientDataError, InvalidInputError
from bmalab.policies import check_exploration_divergence
from bmalab.schemas import RunConfig, design_series
from bmalab.simulate import DesignPoint, ReplicationResult, run_design
from bmalab.writers import ensure_dir, write_manifest, write_table

logger = logging.getLogger(__name__)

DIAGNOSTICS = ("rates", "decay", "divergence", "pac")

RATE_COLUMNS = [
    "series", "d", "x", "estimator", "axis", "slope", "predicted_slope",
    "intercept", "r_squared", "n_points", "mean_acceleration",
]
DECAY_COLUMNS = [
    "series", "d", "x", "source", "bias", "c", "slope", "predicted_slope",
    "intercept", "r_squared", "n_points",
]
DIVERGENCE_COLUMNS = ["series", "policy", "horizon", "partial_sum", "quarter_sum", "growth_ok", "method"]
PAC_COLUMNS = ["epsilon", "acceleration", "sample_size"]

# same tolerance the simulator uses to call a source unbiased
BIAS_TOL = 1e-12

Run = Tuple[DesignPoint, List[ReplicationResult]]


def _run_series(points: List[DesignPoint], parallelism: int) -> List[Run]:
    return [(p, run_design(p, parallelism)) for p in sorted(points, key=lambda p: p.horizon)]


def _require_unbiased(series_id: str, point: DesignPoint) -> None:
    for cell in point.environment.cells():
        truth = point.environment.truth(cell)
        if not any(abs(source_bias(truth, p)) <= BIAS_TOL for p in point.priors_for(cell)):
            raise EmptyUnbiasedSetError(
                f"Series '{series_id}' cell {cell.label()} has no unbiased source; "
                "the acceleration factor needs a nonempty unbiased set"
            )


def _rate_rows(series_id: str, runs: List[Run], cfg: RunConfig) -> List[Dict]:
    summaries: Dict[int, DesignSummary] = {p.horizon: summarize_design(r) for p, r in runs}
    last = summaries[max(summaries)]
    use_ell = cfg.diagnostics.use_ell
    rows = []
    for cell in runs[0][0].environment.cells():
        for estimator in ESTIMATORS:
            fit = rate_regression(mean_errors_by_n(summaries, cell, estimator), use_ell=use_ell)
            rows.append({
                "series": series_id,
                "d": cell.treatment,
                "x": cell.covariate,
                "estimator": estimator,
                "axis": fit.axis,
                "slope": fit.slope,
                "predicted_slope": 1.0 if use_ell else -0.5,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
                "mean_acceleration": last.cell(cell).mean_acceleration,
            })
    return rows


def _decay_rows(series_id: str, runs: List[Run]) -> List[Dict]:
    rows = []
    first_point, first_results = runs[0]
    for cell in first_point.environment.cells():
        sample = first_results[0].cell(cell)
        for s, label in enumerate(sample.labels):
            bias = sample.biases[s]
            if abs(bias) <= BIAS_TOL:
                continue
            alphas, nus = [], []
            for _, results in runs:
                alphas.append(math.fsum(r.cell(cell).weights.weights[s] for r in results) / len(results))
                nus.append(math.fsum(r.cell(cell).nus[s] for r in results) / len(results))
            try:
                fit = decay_slope_fit(alphas, nus, bias)
            except InsufficientDataError as exc:
                logger.warning(f"Skipping decay fit for {series_id} {cell.label()} {label}: {exc.detail}")
                continue
            c = sample.c_values[s]
            rows.append({
                "series": series_id,
                "d": cell.treatment,
                "x": cell.covariate,
                "source": label,
                "bias": bias,
                "c": c,
                "slope": fit.slope,
                "predicted_slope": -0.5 * theoretical_acceleration(c),
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
            })
    return rows


def _divergence_row(series_id: str, point: DesignPoint, cfg: RunConfig) -> Dict:
    horizon = cfg.diagnostics.divergence_horizon
    result = check_exploration_divergence(
        point.policy,
        horizon,
        replications=cfg.diagnostics.divergence_replications,
        seed=cfg.base_seed,
    )
    return {
        "series": series_id,
        "policy": point.policy.kind,
        "horizon": horizon,
        "partial_sum": result.partial_sum,
        "quarter_sum": result.quarter_sum,
        "growth_ok": result.growth_ok,
        "method": result.method,
    }


def cmd_diagnose(cfg: RunConfig, diagnostic: str) -> int:
    if diagnostic not in DIAGNOSTICS:
        raise InvalidInputError(f"Unknown diagnostic '{diagnostic}'. Allowed: {', '.join(DIAGNOSTICS)}")
    out_dir = ensure_dir(cfg.output_dir)
    series = design_series(cfg)
    logger.info(f"Running '{diagnostic}' diagnostic over {len(series)} series")

    if diagnostic == "pac":
        rows = [
            {"epsilon": eps, "acceleration": a, "sample_size": pac_sample_size(eps, a)}
            for eps in cfg.diagnostics.pac_epsilons
            for a in cfg.diagnostics.pac_accelerations
        ]
        columns = PAC_COLUMNS
    elif diagnostic == "divergence":
        rows = [_divergence_row(series_id, points[0], cfg) for series_id, points in series]
        columns = DIVERGENCE_COLUMNS
    elif diagnostic == "rates":
        for series_id, points in series:
            _require_unbiased(series_id, points[0])
        rows = []
        for series_id, points in series:
            rows.extend(_rate_rows(series_id, _run_series(points, cfg.parallelism), cfg))
        columns = RATE_COLUMNS
    else:
        rows = []
        for series_id, points in series:
            rows.extend(_decay_rows(series_id, _run_series(points, cfg.parallelism)))
        if not rows:
            raise InsufficientDataError("No biased source produced a decay fit; check the design grid")
        columns = DECAY_COLUMNS

    write_table(rows, columns, out_dir, "diagnostics", cfg.output_formats)
    write_manifest(out_dir, cfg, f"diagnose {diagnostic}", [sid for sid, _ in series])
    return 0
