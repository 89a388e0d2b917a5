"""Flat ``section.key = value`` configuration files for :class:`PipelineConfig`.

Nested configs map to sections (``search``, ``selection``, ``ransac``,
``fusion``); top-level fields live in ``pipeline``.  Lines starting with ``#``
are comments, so a run manifest (config echo plus commented metadata) parses
back to the same config.
"""
from __future__ import annotations

import dataclasses
import os
import platform
from pathlib import Path
from typing import Iterable, Mapping

from .frames import ScaleSequence
from .pipeline import PipelineConfig

SECTIONS = ("search", "selection", "ransac", "fusion")


class ConfigError(ValueError):
    """Malformed config text or an unknown / ill-typed key."""


def _format(value) -> str:
    if isinstance(value, ScaleSequence):
        return ", ".join(repr(s) for s in value.scales)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, ScaleSequence):
            return ScaleSequence(tuple(float(s) for s in raw.split(",") if s.strip()))
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    return raw


def to_items(cfg: PipelineConfig) -> list[tuple[str, str]]:
    """Every addressable field as ``(dotted key, text value)``, in a stable order."""
    items = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            items.extend((f"{f.name}.{g.name}", _format(getattr(value, g.name)))
                         for g in dataclasses.fields(value))
        else:
            items.append((f"pipeline.{f.name}", _format(value)))
    return items


def dumps(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_items(cfg))


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def apply(cfg: PipelineConfig, settings: Mapping[str, str]) -> PipelineConfig:
    """Return ``cfg`` with the dotted ``settings`` applied (later keys win)."""
    nested: dict[str, dict] = {s: {} for s in SECTIONS}
    top: dict = {}
    for key, raw in settings.items():
        section, _, name = key.partition(".")
        if section in SECTIONS:
            target = getattr(cfg, section)
            if name not in {g.name for g in dataclasses.fields(target)}:
                raise ConfigError(f"unknown key {key!r}")
            nested[section][name] = _parse(raw, getattr(target, name), key)
        elif section == "pipeline" and name in {f.name for f in dataclasses.fields(cfg)} \
                and name not in SECTIONS:
            top[name] = _parse(raw, getattr(cfg, name), key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        for section, changes in nested.items():
            if changes:
                top[section] = dataclasses.replace(getattr(cfg, section), **changes)
        return dataclasses.replace(cfg, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def parse_overrides(pairs: Iterable[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load(path: str | os.PathLike | None = None, overrides: Iterable[str] = (),
         base: PipelineConfig | None = None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = base or PipelineConfig()
    if path is not None:
        cfg = apply(cfg, parse_text(Path(path).read_text()))
    return apply(cfg, parse_overrides(overrides))


def manifest(cfg: PipelineConfig, extra: Mapping[str, object] | None = None) -> str:
    """Config echo followed by commented run metadata (seed, versions)."""
    import numpy
    import scipy

    from . import __version__

    meta = {"selfx": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__, "seed": cfg.seed}
    meta.update(extra or {})
    head = "".join(f"# {k}: {v}\n" for k, v in meta.items())
    return head + dumps(cfg)
