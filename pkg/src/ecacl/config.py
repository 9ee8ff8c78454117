"""Run configuration and its strict JSON (de)serialisation."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .augment import StrongAugSpec, WeakAugSpec
from .data import ShiftSpec, SplitSpec
from .errors import ConfigError
from .uda import UdaTerm

__all__ = [
    "ModelConfig",
    "OptimConfig",
    "DataConfig",
    "TrainConfig",
    "from_dict",
    "to_dict",
    "load_config",
    "dump_config",
    "schema",
]

VARIANTS = ("ecacl_p", "ecacl_t")


@dataclass
class ModelConfig:
    hidden_dims: List[int] = field(default_factory=lambda: [128, 64])
    embed_dim: int = 32
    normalize: bool = True
    temperature: float = 0.05


@dataclass
class OptimConfig:
    momentum: float = 0.9
    lr_head: float = 0.01
    lr_body: float = 0.001
    gamma: float = 10.0
    beta: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_head < 0 or self.lr_body < 0:
            raise ConfigError("learning rates must be nonnegative")


@dataclass
class DataConfig:
    """Where the two domains come from.

    With ``source_idx``/``target_idx`` unset both domains are synthetic: the
    source is rendered with ``source_seed``, the target with ``target_seed``
    and then passed through ``shift``.  Each IDX entry is an
    ``[images_path, labels_path]`` pair.
    """

    num_classes: int = 8
    per_class: int = 200
    image_size: int = 16
    channels: int = 1
    noise_std: float = 0.1
    jitter: float = 1.0
    source_seed: int = 0
    target_seed: int = 1
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    source_idx: Optional[List[str]] = None
    target_idx: Optional[List[str]] = None


@dataclass
class TrainConfig:
    variant: str = "ecacl_p"
    uda: UdaTerm = field(default_factory=UdaTerm)
    lambda1: float = 0.1
    lambda2: float = 1.0
    sigma: float = 0.8
    margin: float = 1.0
    strong_labeled: bool = True
    M: int = 8
    N_s: int = 10
    N_t: int = 1
    N_u: int = 24
    steps: int = 3000
    eval_every: int = 200
    log_every: int = 50
    run_seed: int = 0
    workers: int = 1
    optim: OptimConfig = field(default_factory=OptimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weak_aug: WeakAugSpec = field(default_factory=lambda: WeakAugSpec(flip_prob=0.0, max_translate_fraction=0.0))
    strong_aug: StrongAugSpec = field(default_factory=StrongAugSpec)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be nonnegative")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError(f"sigma must lie in [0, 1], got {self.sigma}")
        if self.margin < 0:
            raise ConfigError(f"margin must be nonnegative, got {self.margin}")
        for name in ("M", "N_s", "N_t", "N_u", "steps", "eval_every", "log_every", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.N_t > self.data.split.shots_per_class:
            raise ConfigError(f"N_t={self.N_t} exceeds shots_per_class={self.data.split.shots_per_class}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return from_dict(tp, value, where)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if origin in (list, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        item = args[0] if args else Any
        out = [_convert(item, v, f"{where}[{i}]") for i, v in enumerate(value)]
        return tuple(out) if origin is tuple else out
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, data: Dict[str, Any], where: str = "config"):
    """Build dataclass ``cls`` from ``data``; unknown keys are an error."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def to_dict(obj) -> Dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(TrainConfig, data)


def dump_config(config: TrainConfig, path=None) -> str:
    text = json.dumps(to_dict(config), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def schema(cls=TrainConfig) -> Dict[str, Any]:
    """Field-by-field description of the config document (types and defaults)."""
    hints = typing.get_type_hints(cls)
    default = cls()
    out = {}
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            out[f.name] = schema(tp)
        else:
            val = getattr(default, f.name)
            out[f.name] = {"type": getattr(tp, "__name__", str(tp)), "default": list(val) if isinstance(val, tuple) else val}
    return out
