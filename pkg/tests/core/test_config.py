from pathlib import Path

from ddsmpc.core import Settings, get_settings


def test_settings_default_values():
    """Test that default values are set correctly."""
    settings = Settings()
    assert settings.environment == "development"
    assert settings.log_level == "INFO"
    assert settings.out_dir == Path("artifacts")
    assert settings.solver_abs_tol == 1e-8
    assert settings.solver_max_iters == 200
    assert settings.pe_max_retries == 5


def test_settings_env_override(monkeypatch):
    """Test that DDSMPC_* environment variables override defaults."""
    monkeypatch.setenv("DDSMPC_ENVIRONMENT", "ci")
    monkeypatch.setenv("DDSMPC_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("DDSMPC_OUT_DIR", "/tmp/ddsmpc-out")
    monkeypatch.setenv("DDSMPC_MAX_WORKERS", "2")
    monkeypatch.setenv("DDSMPC_SOLVER_RECHECK_TOL", "1e-5")

    settings = Settings()
    assert settings.environment == "ci"
    assert settings.log_level == "DEBUG"
    assert settings.out_dir == Path("/tmp/ddsmpc-out")
    assert settings.max_workers == 2
    assert settings.solver_recheck_tol == 1e-5


def test_get_settings_singleton():
    """Test that get_settings returns the same instance."""
    settings1 = get_settings()
    settings2 = get_settings()
    assert settings1 is settings2
