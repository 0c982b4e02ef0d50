"""Artifact storage."""

from ddsmpc.repositories.artifacts import ArtifactRepository, FileArtifactRepository

__all__ = ["ArtifactRepository", "FileArtifactRepository"]
