"""Dataclasses for every domain type."""
