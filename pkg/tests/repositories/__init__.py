"""Repository layer tests."""
