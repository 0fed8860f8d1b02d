"""Access to the data fixtures bundled with the package."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigurationError

_DATA_DIR = Path(__file__).parent / "data"


def data_path(*parts: str) -> Path:
    """Path to a bundled data asset, e.g. ``data_path("olaparib", "corpus.json")``."""
    path = _DATA_DIR.joinpath(*parts)
    if not path.exists():
        raise ConfigurationError(f"missing bundled data asset: {'/'.join(parts)}")
    return path
