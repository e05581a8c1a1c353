"""Flat key=value config files, manifests, and seed derivation.

Every CLI option can come from a config file (``key=value`` per line,
``#`` comments); a command-line flag of the same name wins. Each command
echoes its resolved configuration into a manifest file in the output
directory, so a run is reproducible from the manifest alone.
"""

from __future__ import annotations

import zlib
from pathlib import Path


def load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


class Settings:
    """Option resolution: CLI flag > config file > coded default."""

    def __init__(self, args: dict[str, object], config: dict[str, str]):
        self._args = args
        self._config = config
        self.resolved: dict[str, object] = {}

    def get(self, key: str, default=None, cast=str):
        value = self._args.get(key.replace("-", "_"))
        if value is None:
            raw = self._config.get(key)
            if raw is None:
                value = default
            elif cast is bool:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = cast(raw)
        self.resolved[key] = value
        return value


def write_manifest(out_dir: str, command: str, resolved: dict[str, object]) -> Path:
    from . import __version__

    path = Path(out_dir) / "manifest.txt"
    lines = [f"command={command}", f"version={__version__}"]
    for key in sorted(resolved):
        lines.append(f"{key}={resolved[key]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def stage_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage sub-seed derived from the single run seed."""
    return zlib.crc32(f"{stage}:{seed}".encode()) & 0x7FFFFFFF
