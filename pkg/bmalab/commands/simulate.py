# bmalab/commands/simulate.py
import logging

from bmalab.analysis import summarize_design
from bmalab.schemas import RunConfig, expand_designs
from bmalab.simulate import run_design
from bmalab.writers import (
    SUMMARY_COLUMNS,
    ensure_dir,
    result_columns,
    result_rows,
    summary_rows,
    write_manifest,
    write_table,
)

logger = logging.getLogger(__name__)


def cmd_simulate(cfg: RunConfig) -> int:
    """Run every grid point of the config; one results file per point plus summary.csv."""
    out_dir = ensure_dir(cfg.output_dir)
    points = expand_designs(cfg)
    logger.info(f"Simulating {len(points)} design points into {out_dir}")

    summary = []
    for design in points:
        results = run_design(design, cfg.parallelism)
        write_table(
            result_rows(results),
            result_columns(design),
            out_dir,
            f"results_{design.design_id}",
            cfg.output_formats,
        )
        summary.extend(summary_rows(design.design_id, summarize_design(results)))

    write_table(summary, SUMMARY_COLUMNS, out_dir, "summary", cfg.output_formats)
    write_manifest(out_dir, cfg, "simulate", [p.design_id for p in points])
    return 0
