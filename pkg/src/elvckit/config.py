"""Flat key = value configuration files with typed values and includes.

Lines are `key = value`, `# comment`, blank, or `include other.cfg`. Values
parse as int, float, or bool when they look like one, else stay strings.
Floats serialize via repr so a save/load cycle is lossless.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

from .errors import InvalidInput, IoError

_KEY_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def _parse_value(raw: str):
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def load_config(path, _seen=None) -> dict:
    """Read a config file, following includes relative to the including file."""
    full = Path(path).resolve()
    seen = _seen if _seen is not None else set()
    if full in seen:
        raise InvalidInput(f"{path}: include cycle detected")
    seen.add(full)
    try:
        text = full.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("include "):
            target = stripped[len("include ") :].strip()
            if not target:
                raise InvalidInput(f"{path}:{lineno}: empty include path")
            out.update(load_config(full.parent / target, seen))
            continue
        if "=" not in stripped:
            raise InvalidInput(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not _KEY_RE.match(key):
            raise InvalidInput(f"{path}:{lineno}: bad key {key!r}")
        out[key] = _parse_value(raw)
    return out


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "\n" in text or text != text.strip():
        raise InvalidInput(f"string value {text!r} cannot survive a round trip")
    return text


def save_config(cfg: dict, path) -> None:
    """Write keys in sorted order; the output text is deterministic."""
    lines = []
    for key in sorted(cfg):
        if not _KEY_RE.match(key):
            raise InvalidInput(f"bad key {key!r}")
        lines.append(f"{key} = {_format_value(cfg[key])}")
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def parse_int_tuple(value) -> tuple:
    """Comma-separated ints, as used for layer width settings."""
    if isinstance(value, int):
        return (value,)
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    if not parts:
        raise InvalidInput(f"cannot parse int tuple from {value!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InvalidInput(f"cannot parse int tuple from {value!r}") from exc
