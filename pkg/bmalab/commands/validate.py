# bmalab/commands/validate.py
import logging
import sys
from pathlib import Path

from bmalab.schemas import expand_designs, load_config, serialize_config

logger = logging.getLogger(__name__)


def cmd_validate(path: Path) -> int:
    """Parse a config, expand its grid, and echo the normalized document."""
    cfg = load_config(path)
    points = expand_designs(cfg)
    logger.info(f"{path}: {len(cfg.designs)} designs, {len(points)} design points, {cfg.replications} replications")
    sys.stdout.write(serialize_config(cfg) + "\n")
    return 0
