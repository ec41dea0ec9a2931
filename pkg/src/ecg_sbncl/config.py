"""Run configuration: sectioned key = value text files mapped onto the dataclass configs.

Sections are ``[model]``, ``[heads]``, ``[ssl]``, ``[train]``, ``[eval]`` and
``[paths]``. Keys must name a field of the section's dataclass; anything else
is rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import get_args, get_type_hints

from .sbncl import HeadConfig, SSLConfig, TrainConfig
from .vit1d import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 10
    neighbours: int = 5
    max_strips: int = 15000
    group_by_subject: bool = False
    afib_per_class: int = 768
    sleep_folds: int = 3
    pca_components: int = 3
    pca_subjects: int = 11
    pca_strips_per_subject: int = 16
    ridge: float = 1e-6


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = ""
    out_dir: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))

    def to_text(self) -> str:
        lines = []
        for section in _SECTIONS:
            lines.append(f"[{section}]")
            for f in fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                lines.append(f"{f.name} = {_render(value)}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = ("model", "heads", "ssl", "train", "eval", "paths")
PRESETS = ("table1", "desk")


def _render(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(raw: str, hint, key: str):
    text = raw.strip()
    args = [a for a in get_args(hint) if a is not type(None)]
    if args:  # Optional[T]
        if text.lower() in ("auto", "none", ""):
            return None
        hint = args[0]
    try:
        if hint is bool:
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if hint in (int, float):
            return hint(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint.__name__}") from None
    return text


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Overlay the sections in ``text`` onto ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    cfg = base or RunConfig()
    updates = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        current = getattr(cfg, section)
        hints = get_type_hints(type(current))
        names = {f.name for f in fields(current)}
        values = {}
        for key, raw in parser.items(section):
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(raw, hints[key], f"{section}.{key}")
        try:
            updates[section] = dataclasses.replace(current, **values)
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return dataclasses.replace(cfg, **updates)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("ecg_sbncl").joinpath("presets", f"{name}.ini").read_text(encoding="utf-8")


def load_config(name_or_path: str | os.PathLike) -> RunConfig:
    """A bundled preset by name, or a config file layered over the defaults."""
    if str(name_or_path) in PRESETS:
        return parse_config(preset_text(str(name_or_path)))
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"no preset or config file named {str(name_or_path)!r}")
    return parse_config(path.read_text(encoding="utf-8"))
