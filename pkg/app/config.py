"""
Application configuration management
"""
from typing import List

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings with environment variable support"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    # Application Settings
    app_name: str = "Conforming Limit Discontinuity Toolkit"
    app_version: str = "1.0.0"
    log_level: str = "INFO"

    # Parallelism (joblib workers; results never depend on this)
    n_jobs: int = 1

    # Fixed-effect absorption
    absorb_tolerance: float = 1e-10
    absorb_max_sweeps: int = 10_000
    absorb_acceleration: str = "gk"
    absorb_acceleration_tol: float = 1e-15
    rank_tolerance: float = 1e-10

    # Event study
    time_window: int = 4
    reference_time: int = -1
    default_bandwidths: List[float] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.15, 0.20]
    cluster_correction: bool = False

    # Treatment-effect curves and RD gaps
    curve_points: int = 40
    curve_range: float = 0.10
    curve_min_mass: float = 30.0
    bootstrap_draws: int = 0
    bootstrap_seed: int = 20230501

    # Validator
    histogram_bin_width: float = 0.005
    histogram_range: float = 0.10

    # Monte Carlo
    mc_replications: int = 10_000
    mc_sample_size: int = 1_000
    mc_alpha: float = 0.2
    mc_beta: float = 0.1
    mc_half_width: float = 0.08
    mc_n_grid: List[int] = [50, 100, 250, 500, 1000, 2000]
    mc_failure_tolerance: float = 0.01


# Global settings instance
settings = Settings()
