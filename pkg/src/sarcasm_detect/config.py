"""Run configuration: INI-style file with [model], [train] and [run] sections.

Command-line overrides take the form ``--section.key=value`` and win over
the file.  Values are coerced to the type of the dataclass field default.
"""

from __future__ import annotations

import configparser
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunSettings:
    manifest: str = ""
    out_dir: str = "runs/latest"
    checkpoint: str = ""
    split: str = "test"
    vocab: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()

    def to_ini(self) -> str:
        lines = []
        for section in ("model", "train", "run"):
            lines.append(f"[{section}]")
            for key, value in asdict(getattr(self, section)).items():
                lines.append(f"{key} = {'' if value is None else value}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "run": RunSettings}


def _coerce(cls, key: str, raw: str):
    hints = typing.get_type_hints(cls)
    if key not in hints:
        raise ConfigError(f"unknown setting {key!r} for section of {cls.__name__}")
    kind = hints[key]
    optional = typing.get_origin(kind) is typing.Union and type(None) in typing.get_args(kind)
    if optional:
        if raw.strip().lower() in ("", "none", "null"):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r} as {getattr(kind, '__name__', kind)}") from exc


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Build a validated :class:`RunConfig` from an optional file plus overrides."""
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep T and U distinct from t and u
        try:
            read = parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not read:
            raise ConfigError(f"cannot read configuration file {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                values[section][key] = _coerce(_SECTIONS[section], key, raw)
    for item in overrides:
        body = item[2:] if item.startswith("--") else item
        if "=" not in body or "." not in body.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form --section.key=value")
        dotted, raw = body.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        values[section][key] = _coerce(_SECTIONS[section], key, raw)
    cfg = RunConfig(
        model=ModelConfig(**values["model"]),
        train=TrainConfig(**values["train"]),
        run=RunSettings(**values["run"]),
    )
    cfg.validate()
    return cfg


def write_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_ini(), encoding="utf-8")


__all__ = ["RunConfig", "RunSettings", "load_run_config", "write_run_config"]
