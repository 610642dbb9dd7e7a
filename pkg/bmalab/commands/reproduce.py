# bmalab/commands/reproduce.py
import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional

from bmalab import config
from bmalab.analysis import summarize_design
from bmalab.errors import InvalidInputError
from bmalab.schemas import ReferenceDesignConfig, RunConfig, expand_designs
from bmalab.simulate import REFERENCE_MODELS, run_design
from bmalab.writers import (
    BOXPLOT_COLUMNS,
    SCALED_ERROR_COLUMNS,
    TABLE1_COLUMNS,
    TRAJECTORY_COLUMNS,
    boxplot_rows,
    ensure_dir,
    scaled_error_rows,
    table1_rows,
    trajectory_rows,
    write_manifest,
    write_table,
)

logger = logging.getLogger(__name__)

SUITES = ("table1", "figures", "all")


def reference_config(base: Optional[RunConfig] = None, assignment: str = "alternating") -> RunConfig:
    """
    The three reference models over the default e and T grids.

    Run-level settings (replications, seed, parallelism, output) come from `base`
    when one is given; its designs are replaced.
    """
    designs = [ReferenceDesignConfig(model_id=m, assignment=assignment) for m in REFERENCE_MODELS]
    if base is None:
        return RunConfig(designs=designs)
    return base.model_copy(update={"designs": designs})


def cmd_reproduce(suite: str, cfg: RunConfig, smoke: bool = False, reps: Optional[int] = None) -> int:
    if suite not in SUITES:
        raise InvalidInputError(f"Unknown suite '{suite}'. Allowed: {', '.join(SUITES)}")
    if smoke and reps is None:
        cfg = cfg.model_copy(update={"replications": config.SMOKE_REPLICATIONS})

    out_dir = ensure_dir(cfg.output_dir)
    points = expand_designs(cfg)
    logger.info(f"Reproducing '{suite}' with {cfg.replications} replications over {len(points)} design points")

    table1, trajectory, scaled, boxes = [], [], [], defaultdict(list)
    for design in points:
        results = run_design(design, cfg.parallelism)
        summary = summarize_design(results)
        table1.extend(table1_rows(design, summary))
        trajectory.extend(trajectory_rows(design, results))
        scaled.extend(scaled_error_rows(design, summary))
        boxes[design.model_id].extend(boxplot_rows(design, summary))

    if suite in ("table1", "all"):
        write_table(table1, TABLE1_COLUMNS, out_dir, "table1_alpha", cfg.output_formats)
        write_table(trajectory, TRAJECTORY_COLUMNS, out_dir, "weight_trajectory", cfg.output_formats)
    if suite in ("figures", "all"):
        write_table(scaled, SCALED_ERROR_COLUMNS, out_dir, "scaled_errors", cfg.output_formats)
        figure_dir = ensure_dir(Path(out_dir) / "figure_data")
        for model_id, rows in boxes.items():
            write_table(rows, BOXPLOT_COLUMNS, figure_dir, f"boxplot_{model_id}", cfg.output_formats)

    write_manifest(out_dir, cfg, f"reproduce {suite}", [p.design_id for p in points])
    return 0
