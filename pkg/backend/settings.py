import os
from dataclasses import dataclass, replace
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

DEFAULT_BACKEND = "PULP_CBC_CMD"

SOLVER_BACKEND = os.getenv("SOLVER_BACKEND", DEFAULT_BACKEND)
SOLVER_TIME_LIMIT = float(os.getenv("SOLVER_TIME_LIMIT", 600))
SOLVER_MIP_GAP = float(os.getenv("SOLVER_MIP_GAP", 1e-6))
SOLVER_SEED = int(os.getenv("SOLVER_SEED", 0))
SOLVER_THREADS = int(os.getenv("SOLVER_THREADS", 1))

# Replaces the strict "< 1" of the indicator constraints by "<= 1 - eps"
STRICT_EPSILON = float(os.getenv("STRICT_EPSILON", 1e-6))

RATE_DISCOUNT = float(os.getenv("RATE_DISCOUNT", 0.0))
DELTA_TOLERANCE = float(os.getenv("DELTA_TOLERANCE", 1 / 64))
RATE_CACHE_TTL = int(os.getenv("RATE_CACHE_TTL", 3600))
RATE_CACHE_SIZE = int(os.getenv("RATE_CACHE_SIZE", 100_000))

OUTPUT_DIR = os.getenv("OUTPUT_DIR", "results")
# When set, every solved subproblem is also written there as an LP file
MODEL_DIR = os.getenv("MODEL_DIR") or None
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()


@dataclass(frozen=True)
class SolverSettings:
    backend: str = DEFAULT_BACKEND
    time_limit: float = 600.0
    mip_gap: float = 1e-6
    seed: int = 0
    threads: int = 1
    epsilon: float = 1e-6
    model_dir: Optional[str] = None

    def merged(self, **overrides):
        """Copy with the given fields replaced; None values are ignored."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes)


def get_solver_settings(
    backend: Optional[str] = None,
    time_limit: Optional[float] = None,
    mip_gap: Optional[float] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    epsilon: Optional[float] = None,
    model_dir: Optional[str] = None,
) -> SolverSettings:
    """Settings from the environment, with explicit arguments taking precedence."""
    base = SolverSettings(
        backend=SOLVER_BACKEND,
        time_limit=SOLVER_TIME_LIMIT,
        mip_gap=SOLVER_MIP_GAP,
        seed=SOLVER_SEED,
        threads=SOLVER_THREADS,
        epsilon=STRICT_EPSILON,
        model_dir=MODEL_DIR,
    )
    settings = base.merged(
        backend=backend,
        time_limit=time_limit,
        mip_gap=mip_gap,
        seed=seed,
        threads=threads,
        epsilon=epsilon,
        model_dir=model_dir,
    )
    if settings.time_limit <= 0:
        raise ValueError(f"time limit must be positive, got {settings.time_limit}")
    if not 0 <= settings.mip_gap < 1:
        raise ValueError(f"mip gap must be in [0, 1), got {settings.mip_gap}")
    if not 0 < settings.epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {settings.epsilon}")
    return settings
