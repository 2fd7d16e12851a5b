"""Access to the data files shipped inside the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def read_text(name: str) -> str:
    return resources.files("parldoc").joinpath("data", name).read_text(encoding="utf-8")


def parse_entries(text: str) -> list[str]:
    """One entry per line; blank lines and ``#`` comments are skipped."""
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.append(line)
    return entries


def load_entries(path: str | Path | None, default: str) -> list[str]:
    """Entries from ``path`` if given, else from the packaged ``default`` file."""
    if path is None:
        return parse_entries(read_text(default))
    return parse_entries(Path(path).read_text(encoding="utf-8"))
