import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import pandas as pd

from bmalab import __version__
from bmalab.analysis import ESTIMATORS, QUANTILE_METHOD, WHISKER_IQR, DesignSummary, summarize_trajectory
from bmalab.errors import OutputError
from bmalab.models import CellKey
from bmalab.schemas import RunConfig
from bmalab.simulate import DesignPoint, ReplicationResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

RESULT_COLUMNS = ["rep", "d", "x", "N", "standard_estimate", "bma_estimate", "truth"]
SUMMARY_COLUMNS = [
    "design", "d", "x", "truth", "mean_N", "estimator", "count",
    "mean", "q1", "median", "q3", "min", "max", "whisker_low", "whisker_high",
    "missing_standard", "mean_acceleration",
]
TABLE1_COLUMNS = ["model", "e", "T", "source_role", "mean_alpha"]
SCALED_ERROR_COLUMNS = ["model", "e", "T", "estimator", "mean", "q1", "median", "q3"]
BOXPLOT_COLUMNS = [
    "model", "e", "T", "N", "estimator", "q1", "median", "q3",
    "whisker_low", "whisker_high", "min", "max", "mean",
]
TRAJECTORY_COLUMNS = ["model", "e", "T", "step", "mean_N", "source_role", "mean_alpha", "mean_nu"]

# arm 0, the control arm, is what the reproduction tables report
REPORTED_CELL = CellKey(0, 0)


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        marker = path / ".write_check"
        marker.write_text("")
        marker.unlink()
    except OSError as exc:
        raise OutputError(f"Output directory {path} is not writable: {exc}") from exc
    return path


def write_table(
    rows: Iterable[Mapping],
    columns: Sequence[str],
    out_dir: Path,
    name: str,
    formats: Sequence[str] = ("csv",),
) -> List[Path]:
    frame = pd.DataFrame(list(rows), columns=list(columns))
    written = []
    try:
        if "csv" in formats:
            path = Path(out_dir) / f"{name}.csv"
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written.append(path)
        if "json" in formats:
            path = Path(out_dir) / f"{name}.json"
            frame.to_json(path, orient="records", indent=2, double_precision=15)
            written.append(path)
    except OSError as exc:
        raise OutputError(f"Could not write {name}: {exc}") from exc
    for path in written:
        logger.info(f"Wrote {path} ({len(frame)} rows)")
    return written


# ----------------------------
# Row builders
# ----------------------------
def result_rows(results: Sequence[ReplicationResult]) -> List[Dict]:
    rows = []
    for rep in results:
        for cell in rep.cells:
            row = {
                "rep": rep.rep_index,
                "d": cell.cell.treatment,
                "x": cell.cell.covariate,
                "N": cell.count,
                "standard_estimate": cell.standard_estimate,
                "bma_estimate": cell.bma_estimate,
                "truth": cell.truth,
            }
            for label, alpha in zip(cell.labels, cell.weights.weights):
                row[f"alpha_{label}"] = alpha
            rows.append(row)
    return rows


def result_columns(design: DesignPoint) -> List[str]:
    return RESULT_COLUMNS + [f"alpha_{label}" for label in design.source_labels()]


def summary_rows(design_id: str, summary: DesignSummary) -> List[Dict]:
    rows = []
    for cell in summary.cells:
        for estimator in ESTIMATORS:
            err = cell.errors[estimator]
            rows.append({
                "design": design_id,
                "d": cell.cell.treatment,
                "x": cell.cell.covariate,
                "truth": cell.truth,
                "mean_N": cell.mean_count,
                "estimator": estimator,
                "count": err.count,
                "mean": err.mean,
                "q1": err.q1,
                "median": err.median,
                "q3": err.q3,
                "min": err.minimum,
                "max": err.maximum,
                "whisker_low": err.whisker_low,
                "whisker_high": err.whisker_high,
                "missing_standard": cell.missing_standard,
                "mean_acceleration": cell.mean_acceleration,
            })
    return rows


def table1_rows(design: DesignPoint, summary: DesignSummary) -> List[Dict]:
    cell = summary.cell(REPORTED_CELL)
    return [
        {"model": design.model_id, "e": design.e, "T": design.horizon, "source_role": label, "mean_alpha": alpha}
        for label, alpha in zip(cell.labels, cell.mean_weights)
    ]


def scaled_error_rows(design: DesignPoint, summary: DesignSummary) -> List[Dict]:
    cell = summary.cell(REPORTED_CELL)
    rows = []
    for estimator in ESTIMATORS:
        err = cell.errors[estimator]
        rows.append({
            "model": design.model_id,
            "e": design.e,
            "T": design.horizon,
            "estimator": estimator,
            "mean": err.mean,
            "q1": err.q1,
            "median": err.median,
            "q3": err.q3,
        })
    return rows


def boxplot_rows(design: DesignPoint, summary: DesignSummary) -> List[Dict]:
    cell = summary.cell(REPORTED_CELL)
    rows = []
    for estimator in ESTIMATORS:
        err = cell.errors[estimator]
        rows.append({
            "model": design.model_id,
            "e": design.e,
            "T": design.horizon,
            "N": cell.mean_count,
            "estimator": estimator,
            "q1": err.q1,
            "median": err.median,
            "q3": err.q3,
            "whisker_low": err.whisker_low,
            "whisker_high": err.whisker_high,
            "min": err.minimum,
            "max": err.maximum,
            "mean": err.mean,
        })
    return rows


def trajectory_rows(design: DesignPoint, results: Sequence[ReplicationResult]) -> List[Dict]:
    rows = []
    for point in summarize_trajectory(results, REPORTED_CELL):
        for label, alpha, nu in zip(design.source_labels(), point.mean_weights, point.mean_nus):
            rows.append({
                "model": design.model_id,
                "e": design.e,
                "T": design.horizon,
                "step": point.step,
                "mean_N": point.mean_count,
                "source_role": label,
                "mean_alpha": alpha,
                "mean_nu": nu,
            })
    return rows


# ----------------------------
# Manifest
# ----------------------------
def write_manifest(out_dir: Path, cfg: RunConfig, command: str, grid: Sequence[str]) -> Path:
    """Everything needed to re-run the outputs in `out_dir`; no timestamps."""
    manifest = {
        "command": command,
        "version": __version__,
        "base_seed": cfg.base_seed,
        "replications": cfg.replications,
        "grid": list(grid),
        "quantile_method": QUANTILE_METHOD,
        "whisker_iqr": WHISKER_IQR,
        "float_format": FLOAT_FORMAT,
        "config": cfg.model_dump(mode="json"),
    }
    path = Path(out_dir) / "manifest.json"
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise OutputError(f"Could not write manifest: {exc}") from exc
    logger.info(f"Wrote {path}")
    return path
