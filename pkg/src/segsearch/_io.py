"""Small file helpers: atomic writes and config loading."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError

PARTIAL_SUFFIX = ".partial"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text via a .partial temp file and rename into place.

    An interrupted write leaves only the .partial file behind, never a
    truncated final file.
    """
    path = Path(path)
    tmp = Path(str(path) + PARTIAL_SUFFIX)
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = Path(str(path) + PARTIAL_SUFFIX)
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_config(path: str | Path) -> dict:
    """Read a JSON or TOML mapping, chosen by file extension (.toml is TOML, anything else JSON)."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"config file {path} must contain an object at top level")
    return data


def canonical_json(obj: Any) -> str:
    """Deterministic JSON used for digests and checksums."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
