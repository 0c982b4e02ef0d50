from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process configuration loaded from DDSMPC_* environment variables."""

    environment: str = "development"
    log_level: str = "INFO"
    out_dir: Path = Path("artifacts")

    solver_abs_tol: float = 1e-8
    solver_rel_tol: float = 1e-8
    solver_max_iters: int = 200
    solver_recheck_tol: float = 1e-6

    max_workers: int = 4
    pe_max_retries: int = 5

    model_config = SettingsConfigDict(
        env_prefix="DDSMPC_", env_file=".env", case_sensitive=False
    )


_settings: Settings | None = None


def get_settings() -> Settings:
    """Get or create settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings
