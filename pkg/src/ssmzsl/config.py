"""Run configuration and its file format.

Config files are INI-style (read with :mod:`configparser`)::

    [train]
    learning_rate = 0.05
    epochs = 30
    lambda_sc = 1.0

    [encoder]
    stage_dims = 16, 32
    stage_depths = 2, 2

Section names are optional groupings: any ``key = value`` line in any
section addresses the field of that name on :class:`TrainConfig` or
:class:`~ssmzsl.encoder.EncoderConfig`.  Lists are comma separated;
booleans accept true/false/yes/no/1/0.  ``#`` and ``;`` start comments.
Unknown keys are an error.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .encoder import EncoderConfig


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    lambda_sc: float = 1.0
    lambda_col: float = 0.3
    temperature: float = 1.0
    seed: int = 0
    precision: str = "float32"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("learning_rate", "momentum", "weight_decay", "lambda_sc", "lambda_col", "temperature"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, not {self.precision!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        enc = obj.pop("encoder", {})
        return cls(encoder=EncoderConfig(**enc), **obj)


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return type(default)(raw.strip())


def apply_overrides(cfg: TrainConfig, values: dict[str, str]) -> TrainConfig:
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)} - {"encoder"}
    enc_fields = {f.name for f in dataclasses.fields(EncoderConfig)}
    train_kw, enc_kw = {}, {}
    for key, raw in values.items():
        if key in train_fields:
            train_kw[key] = _convert(raw, getattr(cfg, key))
        elif key in enc_fields:
            enc_kw[key] = _convert(raw, getattr(cfg.encoder, key))
        else:
            raise ValueError(f"unknown config key {key!r}")
    encoder = dataclasses.replace(cfg.encoder, **enc_kw)
    return dataclasses.replace(cfg, encoder=encoder, **train_kw)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        text = fh.read()
    # keys before any section header are allowed
    parser.read_string("[__top__]\n" + text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            values[key] = raw
    return apply_overrides(base or TrainConfig(), values)
