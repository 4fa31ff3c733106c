from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from typing import Literal
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="Root log level (LOG_LEVEL)"
    )
    show_progress: bool = Field(default=True, description="Show tqdm bars on sweeps (SHOW_PROGRESS)")

    # Output
    output_dir: str = Field(default="runs", description="Default report directory (OUTPUT_DIR)")

    # Processing
    max_threads: int = Field(default=4, ge=1, description="Cap for smoother fan-out (MAX_THREADS)")

    # Planner guards
    max_joint_paths: int = Field(
        default=2_000_000, ge=1, description="Exhaustive planner joint path limit (MAX_JOINT_PATHS)"
    )

    # Benchmark
    bench_repetitions: int = Field(default=10, ge=1, description="Default repetitions per config (BENCH_REPETITIONS)")
    max_table_bytes: int = Field(
        default=512 * 1024 ** 2, ge=1, description="Largest pair-table footprint the benchmark builds (MAX_TABLE_BYTES)"
    )

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",  # Ignore extra fields from .env file
    )


settings = Settings()
