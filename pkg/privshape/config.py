"""Runtime settings."""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings loaded from PRIVSHAPE_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="PRIVSHAPE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Paths
    OUTPUT_DIR: str = "./runs"

    # Logging
    LOG_LEVEL: str = "INFO"

    # Matrix execution
    PARALLELISM: int = 2  # concurrent matrix cells
    ENABLE_PARALLEL_CELLS: bool = True
    CELL_TIMEOUT: int = 3600  # seconds per matrix cell

    # QP solver
    QP_MAX_ITER: int = 100
    QP_TOLERANCE: float = 1e-9  # interior-point stopping tolerance
    KKT_TOLERANCE: float = 1e-6  # residual contract for an optimal status

    # Branch and bound
    MIQP_NODE_LIMIT: int = 2000
    CONTROL_NODE_LIMIT: int = 64  # per receding-horizon step
    MIQP_GAP: float = 1e-6

    # Simulation
    DEFAULT_DAYS: int = 30
    LONG_RUN_DAYS: int = 180
    HISTORY_DAYS: int = 7
    DISPATCH_STEP_SECONDS: int = 300

    def ensure_dirs(self) -> None:
        """Create the output directory if it doesn't exist."""
        Path(self.OUTPUT_DIR).mkdir(parents=True, exist_ok=True)


settings = Settings()
