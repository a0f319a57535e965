"""Run configuration: one JSON tree drives every command.

The tree nests the per-module configs.  Parsing is strict: unknown keys
are rejected with their location, so a typo never silently falls back
to a default.  Missing keys do take defaults, which lets a config file
state only what it overrides while `to_dict` always emits the full
tree (that full form is what run metadata snapshots).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, get_type_hints

from .data import SplitSpec
from .decoder import DecoderConfig
from .diffusion import DenoiserConfig
from .encoder import EncoderConfig
from .objective import TrainConfig
from .property_head import FinetuneConfig, HeadConfig
from .schedule import NoiseSchedule, linear_schedule

OUT_DIR_ENV_VAR = "MOLDIFFVAE_OUT_DIR"


class ConfigError(ValueError):
    """Config file contents cannot be turned into a valid RunConfig."""


@dataclass(frozen=True)
class ScheduleConfig:
    n_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def build(self) -> NoiseSchedule:
        return linear_schedule(self.n_steps, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    finetune_dataset: str = ""
    out_dir: str = "run_out"
    seed: int = 0
    v_max: int = 32
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self) -> None:
        if self.v_max < 1:
            raise ValueError(f"v_max must be >= 1, got {self.v_max}")
        if self.denoiser.d != self.encoder.d:
            raise ValueError(
                f"denoiser latent width {self.denoiser.d} must match "
                f"encoder latent width {self.encoder.d}"
            )

    def labeled_dataset(self) -> str:
        return self.finetune_dataset or self.dataset


def to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def _coerce(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a key-value table, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} under {where}")
    hints = get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        target = hints[name]
        spot = f"{where}.{name}"
        if dataclasses.is_dataclass(target):
            kwargs[name] = _coerce(target, value, spot)
        elif target is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{spot} must be a number, got {value!r}")
            kwargs[name] = float(value)
        elif target is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{spot} must be an integer, got {value!r}")
            kwargs[name] = value
        elif target is str:
            if not isinstance(value, str):
                raise ConfigError(f"{spot} must be a string, got {value!r}")
            kwargs[name] = value
        else:
            raise ConfigError(f"{spot} has unsupported field type {target!r}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    return _coerce(RunConfig, data, "config")


def config_json(config: RunConfig) -> str:
    return json.dumps(to_dict(config), indent=2) + "\n"


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)


def resolve_out_dir(config: RunConfig) -> str:
    return os.environ.get(OUT_DIR_ENV_VAR) or config.out_dir
