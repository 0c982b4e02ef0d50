from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from ddsmpc.integrations.conic_solver import ConicSolver, SolveSettings
from ddsmpc.repositories.artifacts import FileArtifactRepository


@lru_cache
def get_solver() -> ConicSolver:
    return ConicSolver(SolveSettings.from_settings())


@lru_cache
def get_artifact_repository(out_dir: Path) -> FileArtifactRepository:
    return FileArtifactRepository(Path(out_dir))
