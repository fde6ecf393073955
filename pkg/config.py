import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from dotenv import load_dotenv

from services.errors import ConfigError

load_dotenv()

# Tree configuration
DEFAULT_Q = 2

# Bessel evaluation regimes (argument thresholds)
BESSEL_SERIES_MAX_T = 20.0
BESSEL_MILLER_MAX_T = 1.0e4
BESSEL_ASYMPTOTIC_MIN_T = 1.0e8
BESSEL_REL_TOL = 1e-12

# Heat kernel series (k-sum truncation, relative to the leading term)
SERIES_TOL = 1e-13

# sup over t discretisation
T_MIN = 1e-3
T_MAX = 1e6
POINTS_PER_DECADE = 40
REFINE_TOL = 1e-8
PROFILE_GRID_POINTS = 400

# Poisson subordination
POISSON_TOL = 1e-8

# Riesz kernel
RIESZ_T_MAX = 1e4
RIESZ_TOL = 1e-6
TAIL_EXPONENT = -2.0
TAIL_EXPONENT_SLACK = 0.3

# Radial L1 truncation
L1_EPS = 1e-4
L1_STALL_WINDOW = 8
L1_MAX_RADIUS = 2048

# Oracles
UNIFORMIZATION_K = 80
EXACT_POWER_MAX_K = 40
MC_SAMPLES = 10**6
MC_BATCH = 10**5

# Experiments
G_CUTOFF = 10**4
ATOM_BATCH = 200
ATOM_CAPS = (16, 64)
ATOM_ROOT_LEVELS = (-8, 8)
BMO_ROOT_HEIGHT_CAP = 64
BMO_SIZE_CAP = 64
DEFAULT_M_LIST = (2, 4, 8, 16)
DEFAULT_LAMBDA_GRID = tuple(10.0 ** (k / 4.0) for k in range(-20, 1))
DEFAULT_T_LIST = (1.0,)
DEFAULT_LOCAL_LEVELS = (-8, -2, 0, 2, 8)
DEFAULT_WEAKTYPE_N = (3, 15, 255)

# Output configuration
CSV_FLOAT_FORMAT = ".17g"
EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3

# Cache configuration
CACHE_DIR = os.getenv("TREEFLOW_CACHE_DIR", "treeflow_cache")
CACHE_FILE = os.path.join(CACHE_DIR, "kernel_values.json")
CACHE_ENABLED = os.getenv("TREEFLOW_CACHE", "1") not in ("0", "false", "False")

# Logging configuration
LOG_FILE = os.getenv("TREEFLOW_LOG_FILE", "treeflow.log")
LOG_LEVEL = os.getenv("TREEFLOW_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

SUBCOMMANDS = (
    "kernel",
    "verify",
    "exp-gn",
    "exp-riesz",
    "exp-atoms",
    "exp-weaktype",
    "exp-g",
    "exp-local",
    "oracle-compare",
)


def resolve_seed(seed: Optional[int]) -> int:
    """--seed wins, then TREEFLOW_SEED, then 0."""
    if seed is not None:
        return int(seed)
    raw = os.getenv("TREEFLOW_SEED")
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"TREEFLOW_SEED must be an integer, got {raw!r}")


@dataclass
class RunConfig:
    """A validated command-line invocation."""

    subcommand: str
    q: int = DEFAULT_Q
    t: List[float] = field(default_factory=lambda: list(DEFAULT_T_LIST))
    d: List[int] = field(default_factory=list)
    x: Optional[str] = None
    y: Optional[str] = None
    n: List[int] = field(default_factory=list)
    m_list: List[int] = field(default_factory=lambda: list(DEFAULT_M_LIST))
    lambda_grid: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    caps: List[int] = field(default_factory=lambda: list(ATOM_CAPS))
    batch: int = ATOM_BATCH
    samples: int = MC_SAMPLES
    tol: float = RIESZ_TOL
    tmax: float = RIESZ_T_MAX
    eps: float = L1_EPS
    max_radius: int = L1_MAX_RADIUS
    seed: int = 0
    out: str = "-"
    format: str = "csv"
    threads: int = 1
    levels: List[int] = field(default_factory=lambda: list(DEFAULT_LOCAL_LEVELS))
    quick: bool = False

    def validate(self) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"Unknown subcommand: {self.subcommand}")
        if self.q < 2:
            raise ConfigError(f"q must be >= 2, got {self.q}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if any(t < 0 for t in self.t):
            raise ConfigError("times must be nonnegative")
        if any(d < 0 for d in self.d):
            raise ConfigError("distances must be nonnegative")
        if any(n < 1 for n in self.n):
            raise ConfigError("n entries must be >= 1")
        if any(m < 1 for m in self.m_list):
            raise ConfigError("m-list entries must be >= 1")
        if any(lam <= 0 for lam in self.lambda_grid):
            raise ConfigError("lambda-grid entries must be positive")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.tmax <= 1:
            raise ConfigError("tmax must exceed 1")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if self.max_radius < 1:
            raise ConfigError("max-radius must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.subcommand == "oracle-compare" and self.samples < 1000:
            raise ConfigError("samples must be >= 1000")
        if any(c < 2 for c in self.caps):
            raise ConfigError("caps must be >= 2")
        if self.subcommand == "kernel" and (self.x is None) != (self.y is None):
            raise ConfigError("kernel needs both --x and --y, or neither")
        return self

    def describe(self) -> Tuple[Tuple[str, object], ...]:
        return tuple(sorted(self.__dict__.items()))
