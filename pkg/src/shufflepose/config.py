"""Run configuration: model and training settings from flat ``key = value`` files.

Every field of :class:`ModelConfig` and :class:`TrainConfig` is addressable by
its name; unknown keys are rejected.  ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple, Union

from .errors import ConfigError
from .network import ModelConfig

REFERENCE_EPOCHS = 140


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    lr_decay: float = 0.1
    decay_epochs: Tuple[float, ...] = (90.0, 120.0)
    total_epochs: int = 140
    rotation: float = 40.0
    scale_min: float = 0.7
    scale_max: float = 1.3
    augment: bool = True
    batch_size: int = 2
    seed: int = 0
    num_samples: int = 64
    eval_samples: int = 16
    sigma: float = 2.0
    flip_test: bool = True
    test_rotations: Tuple[float, ...] = ()
    area_scale: float = 1.0
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        d = list(self.decay_epochs)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError(f"decay_epochs must be strictly increasing, got {d}")
        if d and d[-1] >= self.total_epochs:
            raise ConfigError(f"decay_epochs {d} must be < total_epochs {self.total_epochs}")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError(f"scale range must be positive and ordered, got [{self.scale_min}, {self.scale_max}]")
        if self.batch_size < 1 or self.num_samples < 1 or self.total_epochs < 1:
            raise ConfigError("batch_size, num_samples and total_epochs must be >= 1")
        if self.base_lr <= 0 or self.sigma <= 0:
            raise ConfigError("base_lr and sigma must be positive")
        return self

    def scaled_decay(self, total_epochs: int) -> Tuple[float, ...]:
        """Decay boundaries moved to the same fractions of a different run length."""
        return tuple(b * total_epochs / REFERENCE_EPOCHS for b in TrainConfig.decay_epochs)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        return self


def _owners() -> Dict[str, type]:
    owners = {}
    for cls in (ModelConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            owners[f.name] = cls
    return owners


def _parse_value(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, base: Union[RunConfig, None] = None) -> RunConfig:
    """Apply ``key = value`` lines on top of ``base`` (defaults when omitted)."""
    cfg = base if base is not None else RunConfig()
    owners = _owners()
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in owners:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        seen[key] = raw
    return apply_overrides(cfg, seen)


def apply_overrides(cfg: RunConfig, values: Dict[str, str]) -> RunConfig:
    owners = _owners()
    updates = {ModelConfig: {}, TrainConfig: {}}
    for key, raw in values.items():
        if key not in owners:
            raise ConfigError(f"unknown config key {key!r}")
        cls = owners[key]
        target = cfg.model if cls is ModelConfig else cfg.train
        default = getattr(target, key)
        updates[cls][key] = raw if not isinstance(raw, str) else _parse_value(key, raw, default)
    train_updates = updates[TrainConfig]
    if "total_epochs" in train_updates and "decay_epochs" not in train_updates:
        train_updates["decay_epochs"] = cfg.train.scaled_decay(train_updates["total_epochs"])
    out = RunConfig(dataclasses.replace(cfg.model, **updates[ModelConfig]),
                    dataclasses.replace(cfg.train, **train_updates))
    return out.validate()


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in (cfg.model, cfg.train):
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
