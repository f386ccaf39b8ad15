"""
Runtime Settings
================
Environment-level configuration using Pydantic Settings.
Experiment parameters live in models/experiment.py; this covers only
process concerns such as logging and default parallelism.
"""

from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings with environment variable support (prefix FADELEAD_)"""

    model_config = SettingsConfigDict(
        env_prefix="FADELEAD_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    app_name: str = "FadeLead Collaborative Perception Simulator"
    app_version: str = "0.1.0"

    # Logging settings
    log_dir: Path = Field(default=Path("logs"), description="Directory for rotating log files")
    file_logging: bool = Field(default=False, description="Write log files under log_dir")
    console_level: str = Field(default="WARNING", description="Console log level name")

    # Execution settings
    default_parallel: int = Field(default=1, ge=1, le=64, description="Seed workers when --parallel is not given")


def get_settings() -> Settings:
    """Fresh settings read from the environment and .env"""
    return Settings()
