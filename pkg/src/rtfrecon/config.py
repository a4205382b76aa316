"""Flat key-value run configuration files and run provenance records.

Config files are plain text, one `key = value` per line, `#` starting a
comment. Values are coerced to the field types of the target dataclass;
unknown keys are rejected by name so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
import platform
import sys
import time
import typing
from pathlib import Path


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines into raw strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(
                f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _convert(key: str, value: str, typ):
    origin = typing.get_origin(typ)
    if origin is tuple:
        args = typing.get_args(typ)
        parts = [p for p in (s.strip() for s in value.split(",")) if p]
        if not parts:
            raise ValueError(f"config key {key!r}: empty sequence")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(key, p, args[0]) for p in parts)
        if len(parts) != len(args):
            raise ValueError(
                f"config key {key!r}: expected {len(args)} values, got {len(parts)}")
        return tuple(_convert(key, p, t) for p, t in zip(parts, args))
    if typ is bool:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: {value!r} is not a boolean")
    if typ is int:
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"config key {key!r}: {value!r} is not an integer") from None
    if typ is float:
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"config key {key!r}: {value!r} is not a number") from None
    if typ is str:
        return value
    raise ValueError(f"config key {key!r} has unsupported type {typ!r}")


def coerce_fields(raw: dict[str, str], cls) -> dict[str, object]:
    """Coerce raw strings to the field types of dataclass `cls`.

    Unknown keys raise ValueError naming the key and the valid set.
    """
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    out: dict[str, object] = {}
    for key, value in raw.items():
        if key not in names:
            raise ValueError(
                f"unknown config key {key!r} for {cls.__name__}; "
                f"valid keys: {', '.join(names)}")
        out[key] = _convert(key, value, hints[key])
    return out


def build_config(cls, file_values: dict[str, str] | None = None,
                 overrides: dict[str, str] | None = None, **fixed):
    """Construct dataclass `cls` from file values, then CLI overrides.

    `fixed` entries are already-typed values that bypass coercion (and
    win over both sources).
    """
    merged: dict[str, str] = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    kwargs = coerce_fields(merged, cls)
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"invalid {cls.__name__}: {exc}") from None


def parse_overrides(pairs) -> dict[str, str]:
    """Turn repeated `--set key=value` flags into a raw mapping."""
    out: dict[str, str] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"override {pair!r} must look like key=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"override {pair!r} has an empty key")
        out[key] = value.strip()
    return out


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)
    if hasattr(obj, "item"):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def run_provenance(command: str, config, seed: int | None,
                   started: float, extra: dict | None = None) -> dict:
    """Assemble the provenance payload written next to every command's outputs."""
    import numpy
    import scipy

    from . import __version__

    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        config = dataclasses.asdict(config)
    payload = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "versions": {
            "rtfrecon": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": time.time() - started,
    }
    if extra:
        payload.update(extra)
    return payload


def write_run_json(out_dir, payload: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path
