"""Plain-text key=value run configuration and run manifests.

Config files hold one ``key = value`` per line; ``#`` starts a comment.
Values are kept as strings and coerced against a per-command schema.
Every run writes a manifest of the resolved configuration plus the
package version, so any run is reproducible from its manifest alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import __version__

__all__ = ["ConfigError", "parse_config_file", "resolve", "write_run_manifest"]


class ConfigError(ValueError):
    pass


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass(frozen=True)
class Field:
    name: str
    type: type
    default: object = None
    required: bool = False


def resolve(raw: dict[str, str], schema: list[Field], source: str = "config") -> dict:
    """Coerce raw string values against a schema; unknown keys are errors
    (they are usually typos)."""
    known = {f.name for f in schema}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{source}: unknown key {key!r} (known: {sorted(known)})")
    resolved = {}
    for f in schema:
        if f.name in raw:
            text = raw[f.name]
            try:
                if f.type is bool:
                    if text.lower() not in ("true", "false", "0", "1"):
                        raise ValueError(text)
                    resolved[f.name] = text.lower() in ("true", "1")
                else:
                    resolved[f.name] = f.type(text)
            except ValueError as exc:
                raise ConfigError(
                    f"{source}: key {f.name!r} expects {f.type.__name__}, got {text!r}"
                ) from exc
        elif f.required:
            raise ConfigError(f"{source}: missing required key {f.name!r}")
        else:
            resolved[f.name] = f.default
    return resolved


def write_run_manifest(out_dir: str | Path, subcommand: str, resolved: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_manifest.json"
    payload = {
        "subcommand": subcommand,
        "package_version": __version__,
        "config": {k: v for k, v in sorted(resolved.items())},
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path
