# config.py
import os
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# --- Logging Configuration (Setup early to catch logs from other initializations) ---
LOG_LEVEL_STR = os.getenv("LOG_LEVEL", "INFO").upper()
# Safely get the logging level from the string (e.g., "INFO" -> logging.INFO)
LOG_LEVEL = getattr(logging, LOG_LEVEL_STR, logging.INFO)

# basicConfig writes to stderr, which keeps `--out -` output clean
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

logger.debug(f"Logger configured with level: {LOG_LEVEL_STR}")

TOOL_NAME = "equipartition-lab"
TOOL_VERSION = "0.1.0"

# --- Reproducibility ---
DEFAULT_SEED = int(os.getenv("EQUIP_SEED", 20240611))

# --- Monte Carlo Parameters (loaded from .env) ---
# We use `float` and `int` to cast the string values from the .env file
MC_SAMPLES = int(os.getenv("MC_SAMPLES", 1_000_000))
MC_CHUNK_SIZE = int(os.getenv("MC_CHUNK_SIZE", 65536))
FD_STEP = float(os.getenv("FD_STEP", 1e-3))
SHELL_FRACTION = float(os.getenv("SHELL_FRACTION", 1e-3))

# --- Dynamics Parameters ---
H_DIVISOR = int(os.getenv("H_DIVISOR", 1000))
AVERAGE_PERIODS = int(os.getenv("AVERAGE_PERIODS", 2000))
BLOCK_COUNT = int(os.getenv("BLOCK_COUNT", 16))
DRIFT_BUDGET = float(os.getenv("DRIFT_BUDGET", 5e-5))
MAX_STEPS = int(os.getenv("MAX_STEPS", 1_000_000_000))

# --- Numerical Tolerances ---
GUARD_BAND = float(os.getenv("GUARD_BAND", 1e-3))
QUAD_TOL = float(os.getenv("QUAD_TOL", 1e-10))

# --- Execution ---
N_JOBS = int(os.getenv("N_JOBS", 1))

if MC_CHUNK_SIZE <= 0:
    raise ValueError("MC_CHUNK_SIZE must be positive!")
if BLOCK_COUNT < 16:
    raise ValueError("BLOCK_COUNT must be at least 16!")
if not 0.0 < GUARD_BAND < 1.0:
    raise ValueError("GUARD_BAND must lie in (0, 1)!")
