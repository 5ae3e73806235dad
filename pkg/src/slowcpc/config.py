"""Configuration dataclasses and the flat ``key = value`` config-file format.

Every field of :class:`TrainConfig` and its nested configs maps to one key.
Nested fields use a dotted prefix (``model.channels``, ``reg.alpha_lorr``,
``aug.p_clean``); top-level trainer fields are bare (``steps``).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ParseError

REG_MODES = ("none", "se", "lorr", "se+lorr")
HEAD_TYPES = ("linear", "attention")
AUG_OPS = ("pitch", "noise", "reverb")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 256
    kernel_sizes: tuple[int, ...] = (10, 8, 4, 4, 4)
    strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    paddings: tuple[int, ...] = (3, 2, 1, 1, 1)
    context_dim: int = 256
    context_layers: int = 1
    prediction_steps: int = 12
    negatives: int = 128
    head_type: str = "linear"

    def __post_init__(self):
        n = len(self.kernel_sizes)
        if not (n == len(self.strides) == len(self.paddings) == 5):
            raise ValueError("kernel_sizes, strides and paddings must each have 5 entries")
        total = 1
        for s in self.strides:
            total *= s
        if total != 160:
            raise ValueError(f"product of strides must be 160; got {total}")
        if self.channels < 2:
            raise ValueError("channels must be >= 2 (channel norm needs >= 2 channels)")
        if self.context_layers not in (1, 2):
            raise ValueError("context_layers must be 1 or 2")
        if self.prediction_steps < 1 or self.negatives < 0:
            raise ValueError("prediction_steps must be >= 1 and negatives >= 0")
        if self.head_type not in HEAD_TYPES:
            raise ValueError(f"head_type must be one of {HEAD_TYPES}")
        if self.head_type == "attention" and self.context_dim % 4:
            raise ValueError("attention head needs context_dim divisible by 4")

    @property
    def feature_dim(self) -> int:
        return self.channels

    @property
    def total_stride(self) -> int:
        return 160


@dataclass(frozen=True)
class RegConfig:
    lambda_se: float = 0.4
    alpha_lorr: float = 1.0
    window: int = 2
    combined_mode: str = "none"

    def __post_init__(self):
        if self.combined_mode not in REG_MODES:
            raise ValueError(f"combined_mode must be one of {REG_MODES}")
        if self.lambda_se < 0 or self.alpha_lorr < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.window < 2:
            raise ValueError("LorR window must be >= 2")


@dataclass(frozen=True)
class AugmentConfig:
    pitch_range: tuple[int, int] = (-300, 300)
    noise_dir: str | None = None
    snr_db_range: tuple[float, float] = (5.0, 15.0)
    room_scale_range: tuple[float, float] = (0.0, 100.0)
    p_clean: float = 0.4
    enabled_ops: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("pitch_range", "snr_db_range", "room_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (lo <= hi)")
        if not 0.0 <= self.p_clean <= 1.0:
            raise ValueError("p_clean must lie in [0, 1]")
        bad = set(self.enabled_ops) - set(AUG_OPS)
        if bad:
            raise ValueError(f"unknown augmentation ops: {sorted(bad)}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 12
    window_samples: int = 20480
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 10.0
    checkpoint_every: int = 1000
    seed: int = 0
    reg: RegConfig = field(default_factory=RegConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size and checkpoint_every must be >= 1")
        if self.window_samples % 160 or self.window_samples <= 0:
            raise ValueError("window_samples must be a positive multiple of 160")


_SECTIONS = {"model": ModelConfig, "reg": RegConfig, "aug": AugmentConfig}


def _parse_value(raw: str, default: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw == "":
                return ()
            items = [s.strip() for s in raw.split(",")]
            proto = default[0] if default else ""
            if isinstance(proto, int):
                return tuple(int(s) for s in items)
            if isinstance(proto, float):
                return tuple(float(s) for s in items)
            return tuple(items)
        if default is None or isinstance(default, str):
            if key == "aug.noise_dir" and raw.lower() in ("", "none"):
                return None
            return raw
    except ValueError:
        raise ParseError(f"bad value for {key!r}: {raw!r}") from None
    raise ParseError(f"cannot parse key {key!r}")


def parse_config(text: str) -> TrainConfig:
    """Parse flat ``key = value`` text into a TrainConfig.

    Blank lines and ``#`` comments are ignored; unknown keys raise ParseError.
    """
    values: dict[str, dict[str, Any]] = {"": {}, "model": {}, "reg": {}, "aug": {}}
    top_defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)
                    if f.name not in _SECTIONS}
    section_defaults = {name: {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
                        for name, cls in _SECTIONS.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            defaults = section_defaults.get(section)
            if defaults is None or name not in defaults:
                raise ParseError(f"line {lineno}: unknown key {key!r}")
            values[section][name] = _parse_value(raw, defaults[name], key)
        else:
            if key not in top_defaults:
                raise ParseError(f"line {lineno}: unknown key {key!r}")
            values[""][key] = _parse_value(raw, top_defaults[key], key)
    try:
        return TrainConfig(
            **values[""],
            model=ModelConfig(**values["model"]),
            reg=RegConfig(**values["reg"]),
            aug=AugmentConfig(**values["aug"]),
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_config(path: str | Path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: TrainConfig) -> str:
    """Render a TrainConfig so that ``parse_config(format_config(c)) == c``."""
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name in _SECTIONS:
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    for k in ("kernel_sizes", "strides", "paddings"):
        d[k] = tuple(d[k])
    return ModelConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    aug = dict(d.pop("aug"))
    for k in ("pitch_range", "snr_db_range", "room_scale_range", "enabled_ops"):
        aug[k] = tuple(aug[k])
    return TrainConfig(
        **{k: v for k, v in d.items() if k not in ("model", "reg")},
        model=model_config_from_dict(d["model"]),
        reg=RegConfig(**d["reg"]),
        aug=AugmentConfig(**aug),
    )


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
