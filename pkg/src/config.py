"""
Runtime configuration for the QND decoherence toolkit.

Two kinds of settings live here:
- Numerical tolerances, fixed for every run (module constants)
- Runtime defaults read from the environment, optionally through a .env file
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

# Pick up a .env file from the working directory if one exists
load_dotenv()

# Density-matrix checks
NORMALIZATION_TOL = 1e-12
HERMITICITY_TOL = 1e-12
PSD_TOL = 1e-10
NEGATIVE_POPULATION_TOL = 1e-12

# Matrix-mode checks
COMMUTATOR_TOL = 1e-10
DIAGONALIZATION_TOL = 1e-9
PRODUCT_STRUCTURE_TOL = 1e-9
JOINT_DIAG_RETRIES = 5

# Protocol and decoherence
UNIFORM_IMPACT_TOL = 1e-12
DECOHERENCE_BOUND_TOL = 1e-12
REALNESS_TOL = 1e-10
DEFAULT_SMOOTHING_WIDTH = 1e-2
DEFAULT_ORACLE_DT = 1e-3
# Bins of the effect-density histogram written by `simulate` (plotting only)
HISTOGRAM_BINS = 50

# Comparison tolerances used by `compare` when a scenario does not set its own
DEFAULT_COMPARE_TOLERANCES = {
    "closed_vs_oracle": 1e-6,
    "closed_vs_factorized": 1e-12,
    "oracle_vs_factorized": 1e-6,
}

# Time samples handled per work item; fixed so results never depend on thread count
TIME_CHUNK = 64


@dataclass(frozen=True)
class Settings:
    """Environment-backed defaults for the command line."""

    output_dir: str
    threads: int
    log_level: str
    oracle_max_dim: int
    seed: int


def load_settings() -> Settings:
    """Read settings from the environment, falling back to defaults."""
    return Settings(
        output_dir=os.getenv("QND_OUTPUT_DIR", "output"),
        threads=max(1, int(os.getenv("QND_THREADS", "1"))),
        log_level=os.getenv("QND_LOG_LEVEL", "INFO").upper(),
        oracle_max_dim=int(os.getenv("QND_ORACLE_MAX_DIM", "64")),
        seed=int(os.getenv("QND_SEED", "12345")),
    )


settings = load_settings()
