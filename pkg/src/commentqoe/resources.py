"""Locations of the configuration data shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def default_path(name: str) -> Path:
    return Path(str(resources.files("commentqoe") / "data" / name))
