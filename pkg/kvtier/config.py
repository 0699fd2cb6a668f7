"""
Configuration Management
Typed process-wide defaults for the simulator.

Only explicit arguments feed the settings object: environment variables and
dotenv files are deliberately not consulted, so a run is fully described by
its experiment file and command-line flags.
"""
from functools import lru_cache
from typing import Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict

GB = 10**9


class Settings(BaseSettings):
    """Simulator defaults."""

    model_config = SettingsConfigDict(frozen=True)

    # Application
    app_name: str = "kvtier"
    app_version: str = "1.0.0"

    # Memory system
    hbm_bandwidth: float = 4.9e12
    link_bandwidth: float = 900e9
    dram_bandwidth: float = 500e9
    hbm_capacity: int = 24 * GB
    dram_capacity: int = 480 * GB

    # Simulated annealing
    sa_p0: float = 0.8
    sa_alpha: float = 0.9
    sa_improve_threshold: float = 0.001
    sa_iters_per_temp: int = 20
    sa_max_iters: int = 2000
    sa_w_bounds: Tuple[int, int] = (1, 32)
    sa_r_step: float = 0.1
    sa_calibration_samples: int = 30
    sa_start_window: int = 8
    sa_start_ratio: float = 0.5
    sa_temp_min_factor: float = 1e-4

    # Page-granularity baseline
    page_size: int = 16
    page_window: int = 8
    page_ratio: float = 1.0

    # Simulation driver
    audit_interval: int = 1000

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        """Restrict sources to init arguments; the environment overrides nothing."""
        return (init_settings,)


# Trace presets - centralized synthetic workload definitions
TRACE_PRESETS = {
    "low-variation": {
        "name": "Low importance variation",
        "churn": 0.05,
        "description": "Important tokens stay largely consistent between consecutive steps",
    },
    "high-variation": {
        "name": "High importance variation",
        "churn": 0.8,
        "description": "Most important tokens change from one step to the next",
    },
}


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
