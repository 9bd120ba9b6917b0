"""Run configuration stored as an INI file.

Sections mirror the component configs: ``[vit]``, ``[optimizer]``,
``[augmentation]``, ``[forest]``, ``[normalization]`` and ``[run]``.  Any
omitted key keeps its default; the defaults are the full-scale training
hyperparameters.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .imaging import IMAGENET_MEAN, IMAGENET_STD, AugmentationConfig
from .severity import ForestConfig
from .vit import OptimizerConfig, ViTConfig


@dataclass(frozen=True)
class Normalization:
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


@dataclass(frozen=True)
class RunSettings:
    epochs: int = 10
    batch_size: int = 16
    split_fraction: float = 0.7
    seed: int = 0
    selector: str = "head"
    augment: bool = True


@dataclass(frozen=True)
class RunConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    normalization: Normalization = field(default_factory=Normalization)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if self.run.epochs < 0 or self.run.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.run.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie strictly between 0 and 1")
        if self.run.selector not in ("head", "full"):
            raise ConfigError("selector must be 'head' or 'full'")

    def effective_augmentation(self) -> AugmentationConfig | None:
        if not self.run.augment:
            return None
        return replace(self.augmentation, output_size=self.vit.image_size)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, run=replace(self.run, seed=seed), forest=replace(self.forest, seed=seed))


SECTIONS = ("vit", "optimizer", "augmentation", "forest", "normalization", "run")


def _parse(raw: str, default, key: str):
    text = raw.strip()
    if key == "max_depth" and text.lower() == "none":
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(v) for v in text.split(","))
    if isinstance(default, int) or default is None:
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = RunConfig()
    parts = {}
    for section in SECTIONS:
        current = getattr(base, section)
        if not parser.has_section(section):
            parts[section] = current
            continue
        known = {f.name for f in fields(current)}
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            try:
                values[key] = _parse(raw, getattr(current, key), key)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
        parts[section] = replace(current, **values)
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section in SECTIONS:
        part = getattr(cfg, section)
        parser[section] = {f.name: _format(getattr(part, f.name)) for f in fields(part)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
