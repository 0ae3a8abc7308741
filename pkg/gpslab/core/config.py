"""
Core configuration module for gpslab
Handles environment variables and process-wide numerical defaults
"""
import logging
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables and .env"""

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "gpslab"
    APP_ENV: str = "development"  # development, test, production
    DEBUG: bool = False

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    LOG_JSON: bool = False
    SHOW_PROGRESS: bool = True  # tqdm bars in optimization loops

    # Reproducibility
    DEFAULT_SEED: int = 1234

    # Exact diagonalization
    ED_DENSE_MAX_DIM: int = 20_000
    ED_MAX_DIM: int = 5_000_000
    ED_RESIDUAL_TOL: float = 1e-9
    ED_MAX_ITER: int = 10_000

    # Sparse Bayesian regression
    PRUNE_ALPHA: float = 1e12  # precisions at or above this are treated as infinite

    # qGPS amplitude caches
    CACHE_REFRESH_INTERVAL: int = 1000
    SMALL_FACTOR: float = 1e-12

    # Artifacts
    FLOAT_DIGITS: int = 17

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        level = str(v).upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator("ED_DENSE_MAX_DIM", "ED_MAX_DIM", "ED_MAX_ITER", "CACHE_REFRESH_INTERVAL")
    @classmethod
    def positive_int(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @property
    def is_production(self) -> bool:
        return self.APP_ENV == "production"


# Global settings instance
settings = Settings()
