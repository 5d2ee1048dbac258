"""Run configuration: one JSON file covering model, data, augmentation, and
optimization, with a default for every field and dotted-path overrides.

The effective config is echoed verbatim into each run directory and its
canonical-JSON hash names the directory, so runs are self-describing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .data import AugmentConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = ""
    img_size: int = 256
    split_mode: str = "ratio"  # "ratio" or "counts"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    counts: tuple[int, int] = (880, 120)

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.counts = tuple(int(c) for c in self.counts)
        if self.split_mode not in ("ratio", "counts"):
            raise ConfigError(f"split_mode must be 'ratio' or 'counts', got {self.split_mode!r}")
        if self.img_size % 16:
            raise ConfigError(f"img_size must be divisible by 16, got {self.img_size}")


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # off by default


@dataclass
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-7


@dataclass
class EarlyStopConfig:
    patience: int = 50


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    loss: str = "bce+dice"
    bce_weight: float = 1.0
    dice_weight: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    threshold: float = 0.5
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        # one master seed drives model init and augmentation streams
        self.model.seed = self.seed
        self.augment.seed = self.seed

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:8]

    def run_name(self) -> str:
        return f"run_{self.hash()}_s{self.seed}"


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _build_section(cls, payload: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} under {path!r}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config under {path!r}: {e}") from e


def config_from_dict(payload: dict) -> RunConfig:
    """Build a RunConfig, filling every missing field with its default."""
    if not isinstance(payload, dict):
        raise ConfigError(f"config root must be an object, got {type(payload).__name__}")
    kwargs = {}
    section_types = {"model": ModelConfig, "data": DataConfig, "augment": AugmentConfig,
                     "optim": OptimConfig, "scheduler": SchedulerConfig,
                     "early_stop": EarlyStopConfig, "train": TrainConfig}
    allowed = {f.name for f in fields(RunConfig)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level config key(s) {sorted(unknown)}")
    for key, value in payload.items():
        if key in section_types:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build_section(section_types[key], value, key)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path) -> RunConfig:
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return config_from_dict(payload)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `section.key=value` strings (values parsed as JSON when possible)."""
    payload = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = payload
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {dotted!r}: no section {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {dotted!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = value
    return config_from_dict(payload)
