# bmalab/config.py

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("BMA_LOG_LEVEL", "INFO").upper()

REPLICATIONS = int(os.getenv("BMA_REPLICATIONS", "1000"))
SMOKE_REPLICATIONS = int(os.getenv("BMA_SMOKE_REPLICATIONS", "10"))
BASE_SEED = int(os.getenv("BMA_BASE_SEED", "20240601"))
PARALLELISM = int(os.getenv("BMA_PARALLELISM", "1"))
OUTPUT_DIR = Path(os.getenv("BMA_OUTPUT_DIR", "./results"))

# exploration check horizon used by `diagnose divergence`
DIVERGENCE_HORIZON = int(os.getenv("BMA_DIVERGENCE_HORIZON", "10000"))

# grid of the reproduction suite
REFERENCE_E_GRID = (0.5, 1.0, 2.0)
REFERENCE_T_GRID = (50, 100, 250, 500, 750)
