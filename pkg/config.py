"""Flat key=value run configuration files."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from errors import ConfigError
from nn_blocks import ModelConfig
from trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train_images: int = 64
    train_size: int = 64
    eval_images: int = 16

    def __post_init__(self) -> None:
        if self.train_images < 1 or self.train_size < 2 or self.eval_images < 0:
            raise ConfigError("invalid synthetic data sizes")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS: dict[type, Callable[[str], Any]] = {int: int, float: float, bool: _parse_bool, str: str}

# config key -> (section, dataclass field)
_MODEL_ALIASES = {"blocks": "num_blocks"}


def _key_table() -> dict[str, tuple[str, str, type]]:
    table: dict[str, tuple[str, str, type]] = {}
    for section, cls in (("model", ModelConfig), ("train", TrainConfig), ("data", DataConfig)):
        defaults = cls()
        for f in fields(cls):
            key = next((k for k, v in _MODEL_ALIASES.items() if v == f.name), f.name) if section == "model" else f.name
            table[key] = (section, f.name, type(getattr(defaults, f.name)))
    return table


def parse_config(text: str) -> RunConfig:
    """One `key = value` per line; blank lines and `#` comments ignored; unknown keys rejected."""
    table = _key_table()
    values: dict[str, dict[str, Any]] = {"model": {}, "train": {}, "data": {}}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in table:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        section, name, kind = table[key]
        try:
            values[section][name] = _PARSERS[kind](value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from None
    return RunConfig(ModelConfig(**values["model"]), TrainConfig(**values["train"]), DataConfig(**values["data"]))


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(run: RunConfig) -> str:
    """Inverse of parse_config; every key written explicitly, in a fixed order."""
    table = _key_table()
    sections = {"model": run.model, "train": run.train, "data": run.data}
    lines = []
    for key, (section, name, kind) in table.items():
        value = getattr(sections[section], name)
        lines.append(f"{key} = {str(value).lower() if kind is bool else value}")
    return "\n".join(lines) + "\n"
