"""
Solver, sweep and application settings loaded from YAML and the environment.
"""

from typing import List, Optional
import os
import logging
import yaml
from pydantic import BaseModel, Field, field_validator, model_validator, ValidationError
from pydantic_settings import BaseSettings
from functools import lru_cache

from dpcorder.errors import ConfigError

# Setup logging
logger = logging.getLogger(__name__)

METHODS = ("random", "heuristic", "exhaustive", "relaxation")
MAX_EXHAUSTIVE_USERS = 8


class SolverSettings(BaseModel):
    """
    Tolerances and iteration caps shared by all solvers.
    """
    dual_gap_tol: float = 1e-6  # relative, ellipsoid stopping rule
    inner_grad_tol: float = 1e-9
    inner_max_iters: int = 200
    feasibility_tol: float = 1e-7  # bits
    max_iters: int = 2000  # ellipsoid iterations
    certificate_tie_tol: float = 1e-7  # on multipliers normalized by the first one
    time_sharing_tie_tol: float = 1e-5  # relative on relaxation multipliers
    max_bound_restarts: int = 8
    initial_bound_scale: float = 1.0
    heuristic_max_iters: Optional[int] = None  # None means 2 * M

    @field_validator(
        "dual_gap_tol",
        "inner_grad_tol",
        "feasibility_tol",
        "certificate_tie_tol",
        "time_sharing_tie_tol",
        "initial_bound_scale",
    )
    @classmethod
    def validate_positive(cls, v: float, info) -> float:
        if not v > 0:
            raise ValueError(f"{info.field_name} must be positive")
        return v

    @field_validator("inner_max_iters", "max_iters")
    @classmethod
    def validate_iterations(cls, v: int, info) -> int:
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator("max_bound_restarts")
    @classmethod
    def validate_restarts(cls, v: int) -> int:
        if v < 0:
            raise ValueError("max_bound_restarts cannot be negative")
        return v

    @field_validator("heuristic_max_iters")
    @classmethod
    def validate_heuristic_iters(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("heuristic_max_iters must be at least 1")
        return v

    def heuristic_cap(self, num_users: int) -> int:
        """Iteration cap of the multiplier-sorting heuristic."""
        return 2 * num_users if self.heuristic_max_iters is None else self.heuristic_max_iters


class SweepConfig(BaseModel):
    """
    Monte Carlo sweep over equal per-user rate targets.
    """
    num_users: int = 3
    num_tx_antennas: int = 3
    rate_grid: List[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0])
    trials: int = 1000
    seed: int = 0
    methods: List[str] = Field(default_factory=lambda: list(METHODS))
    solver: SolverSettings = Field(default_factory=SolverSettings)
    output: str = "sweep.csv"
    threads: int = 1
    record_wall_time: bool = False  # wall time breaks byte-identical output

    @field_validator("num_users", "num_tx_antennas", "trials", "threads")
    @classmethod
    def validate_at_least_one(cls, v: int, info) -> int:
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator("rate_grid")
    @classmethod
    def validate_rate_grid(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("rate_grid must not be empty")
        if any(r <= 0 for r in v):
            raise ValueError("rate_grid entries must be strictly positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("rate_grid must be strictly increasing")
        return v

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v: List[str]) -> List[str]:
        unknown = [m for m in v if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not v:
            raise ValueError("at least one method is required")
        # canonical order keeps the CSV layout independent of the config spelling
        return [m for m in METHODS if m in v]

    @model_validator(mode="after")
    def validate_exhaustive_size(self) -> "SweepConfig":
        if "exhaustive" in self.methods and self.num_users > MAX_EXHAUSTIVE_USERS:
            raise ValueError(
                f"exhaustive search is limited to {MAX_EXHAUSTIVE_USERS} users, got {self.num_users}"
            )
        return self


class Config(BaseSettings):
    """
    Main application configuration.
    """
    log_level: str = "INFO"
    metrics_file: Optional[str] = None
    solver: SolverSettings = Field(default_factory=SolverSettings)

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()


@lru_cache()
def get_config() -> Config:
    """Get config singleton with caching."""
    return load_config()


def _read_yaml(path: str) -> dict:
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in config file {path}: {str(e)}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at the top level")
    return data


def _raise_validation_error(e: ValidationError, what: str):
    logger.error(f"{what} validation error: {str(e)}")
    messages = []
    for error in e.errors():
        loc = ".".join(str(x) for x in error["loc"])
        logger.error(f"  - {loc}: {error['msg']}")
        messages.append(f"{loc}: {error['msg']}")
    raise ConfigError(f"Invalid {what}: " + "; ".join(messages))


def load_config(config_path: Optional[str] = None) -> Config:
    """
    Load configuration from YAML file with environment variable overrides.

    Args:
        config_path: Path to YAML configuration file

    Returns:
        Config: Validated configuration object

    Raises:
        ConfigError: If configuration is invalid
    """
    if config_path is None:
        config_path = os.environ.get("CONFIG_FILE", "config.yml")

    logger.debug(f"Loading configuration from {config_path}")

    if os.path.exists(config_path):
        config_data = _read_yaml(config_path)
    else:
        logger.debug(f"Config file not found: {config_path}, using defaults and environment variables")
        config_data = {}

    # Override with environment variables
    if "log_level" not in config_data and "LOG_LEVEL" in os.environ:
        config_data["log_level"] = os.environ.get("LOG_LEVEL")

    if "metrics_file" not in config_data and "METRICS_FILE" in os.environ:
        config_data["metrics_file"] = os.environ.get("METRICS_FILE")

    try:
        return Config(**config_data)
    except ValidationError as e:
        _raise_validation_error(e, "configuration")


def load_sweep_config(config_path: str) -> SweepConfig:
    """
    Load and validate a sweep configuration (YAML or JSON).

    Raises:
        ConfigError: If the file is missing or invalid
    """
    if not os.path.exists(config_path):
        raise ConfigError(f"Sweep config file not found: {config_path}")

    logger.info(f"Loading sweep configuration from {config_path}")
    try:
        return SweepConfig(**_read_yaml(config_path))
    except ValidationError as e:
        _raise_validation_error(e, "sweep configuration")
