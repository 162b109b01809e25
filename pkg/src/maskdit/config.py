"""Run configuration: one JSON document holding every module's settings.

Unknown keys are rejected at every nesting level so a typo cannot silently
fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .data import DatasetSpec
from .diffusion import EdmConstants
from .errors import ConfigError
from .sampler import SamplerConfig

SCHEDULES = ("zero", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    mask_ratio: float = 0.5
    mae_weight: float = 0.1
    p_uncond: float = 0.1
    dsm_mode: str = "unmasked"
    lr: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    phase1_steps: int = 3000
    phase2_steps: int = 500
    schedule: str = "zero"
    tune_lr: float = 5e-5
    tune_batch_size: int | None = None
    ckpt_every: int = 500

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if self.mae_weight < 0:
            raise ConfigError("mae_weight must be non-negative")
        if not 0 <= self.p_uncond <= 1:
            raise ConfigError("p_uncond must lie in [0, 1]")
        if self.dsm_mode not in ("unmasked", "full"):
            raise ConfigError(f"dsm_mode must be 'unmasked' or 'full', got {self.dsm_mode!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.batch_size <= 0 or (self.tune_batch_size is not None and self.tune_batch_size <= 0):
            raise ConfigError("batch sizes must be positive")
        if self.phase1_steps < 0 or self.phase2_steps < 0 or self.ckpt_every <= 0:
            raise ConfigError("step counts must be non-negative and ckpt_every positive")
        if self.lr <= 0 or self.tune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if len(self.adam_betas) != 2:
            raise ConfigError("adam_betas needs two entries")


@dataclass(frozen=True)
class EvalConfig:
    num_samples: int = 256
    guidance_scale: float = 1.5
    real_seed: int = 1234

    def __post_init__(self):
        if self.num_samples < 2:
            raise ConfigError("num_samples must be at least 2")
        if self.guidance_scale < 1:
            raise ConfigError("guidance_scale must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    edm: EdmConstants = field(default_factory=EdmConstants)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        b, d = self.backbone, self.data
        if (b.image_size, b.channels, b.num_classes) != (d.image_size, d.channels, d.num_classes):
            raise ConfigError("backbone and data disagree on image size, channels, or class count")

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc, "config")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def replace_training(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, training=dataclasses.replace(self.training, **changes))


def _to_plain(value):
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        ftype = fields[name].type
        nested = _NESTED.get(ftype) if isinstance(ftype, str) else None
        if nested is not None:
            value = _build(nested, value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(_tuple_deep(v) for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


def _tuple_deep(v):
    return tuple(_tuple_deep(x) for x in v) if isinstance(v, list) else v


_NESTED = {
    "BackboneConfig": BackboneConfig,
    "EdmConstants": EdmConstants,
    "SamplerConfig": SamplerConfig,
    "DatasetSpec": DatasetSpec,
    "TrainConfig": TrainConfig,
    "EvalConfig": EvalConfig,
}
