"""Run configuration: a flat key=value file merged with command-line overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    channels: tuple[int, ...] = (8, 16, 32)
    convs_per_stage: int = 2
    reduction: int = 8
    decoder_width: int = 16
    # training
    batch_size: int = 4
    lr_stage_a: float = 0.007
    lr_stage_b: float = 0.001
    iterations_a: int = 100
    iterations_b: int = 2000
    momentum: float = 0.9
    weight_decay: float = 0.00004
    augment: bool = True
    pretrain: bool = True
    seed: int = 0
    # data
    size: int = 128
    train_count: int = 200
    test_count: int = 50
    train_seed: int = 0
    test_seed: int = 100000

    def model_config(self, in_channels: int = 3) -> ModelConfig:
        return ModelConfig(input_size=self.size, in_channels=in_channels, channels=self.channels,
                           convs_per_stage=self.convs_per_stage, reduction=self.reduction,
                           decoder_width=self.decoder_width)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, lr_stage_a=self.lr_stage_a,
                           lr_stage_b=self.lr_stage_b, iterations_a=self.iterations_a,
                           iterations_b=self.iterations_b, momentum=self.momentum,
                           weight_decay=self.weight_decay, seed=self.seed, augment=self.augment)

    def to_text(self) -> str:
        out = []
        for key, val in asdict(self).items():
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            out.append(f"{key}={val}")
        return "\n".join(out) + "\n"

    def override(self, values: Mapping[str, Any]) -> "RunConfig":
        clean = {k: v for k, v in values.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: _coerce(k, v) for k, v in clean.items()})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _TYPES[key]
    if not isinstance(value, str):
        return tuple(value) if kind.startswith("tuple") else value
    try:
        if kind.startswith("tuple"):
            return tuple(int(v) for v in value.split(","))
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for {key} ({kind})") from exc
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return RunConfig().override(values)


def load_config(path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p))
