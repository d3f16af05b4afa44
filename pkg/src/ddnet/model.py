"""Two-branch Cartesian/polar encoder, importance-based fusion and decoder."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import (Conv2d, Module, Tensor, bilinear_resize, channel_max, channel_mean,
                       concat, cross_entropy, global_avg_pool, global_max_pool, no_grad,
                       relu, sigmoid)
from .errors import ConfigError, ContractError, DimensionError
from .polar import (PolarGridSpec, inverse_polar_transform_labels, polar_transform)

CARTESIAN = "cartesian"
POLAR = "polar"
NUM_CLASSES = 3


@dataclass
class ModelConfig:
    input_size: int = 128
    in_channels: int = 3
    channels: tuple[int, ...] = (8, 16, 32)
    convs_per_stage: int = 2
    reduction: int = 8
    decoder_width: int = 16
    padding: str = "same"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels or min(self.channels) < 1:
            raise ConfigError("channels must be a non-empty list of positive ints")
        if self.convs_per_stage < 1:
            raise ConfigError("convs_per_stage must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.padding == "same" and self.input_size % self.total_stride:
            raise ConfigError(f"input size {self.input_size} not divisible by total stride "
                              f"{self.total_stride}")

    @property
    def num_stages(self) -> int:
        return len(self.channels)

    @property
    def total_stride(self) -> int:
        return 2 ** (self.num_stages - 1)

    def stage_sizes(self) -> list[int]:
        return [self.input_size // 2 ** i for i in range(self.num_stages)]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name}={val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown model key {key!r}")
            if key == "channels":
                kwargs[key] = tuple(int(v) for v in val.split(","))
            elif key == "padding":
                kwargs[key] = val
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class FeatureMaps:
    domain: str
    stage: int
    tensor: Tensor

    @property
    def shape(self) -> tuple:
        return self.tensor.shape


@dataclass
class ImportanceMaps:
    channel: Tensor
    location: Tensor


class Encoder(Module):
    """Plain conv stages; stages after the first halve resolution with a
    stride-2 first conv."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        pad = 1 if cfg.padding == "same" else 0
        self.stages = []
        prev = cfg.in_channels
        for s, ch in enumerate(cfg.channels):
            convs = []
            for i in range(cfg.convs_per_stage):
                stride = 2 if (s > 0 and i == 0) else 1
                convs.append(Conv2d(prev, ch, 3, stride=stride, padding=pad, rng=rng))
                prev = ch
            self.stages.append(convs)

    def stage_modules(self):
        return self.stages

    def named_parameters(self, prefix: str = ""):
        for s, convs in enumerate(self.stages):
            for i, conv in enumerate(convs):
                yield from conv.named_parameters(f"{prefix}stages.{s}.{i}.")

    def forward(self, x: Tensor) -> list[Tensor]:
        outs = []
        for convs in self.stages:
            for conv in convs:
                x = relu(conv(x))
            outs.append(x)
        return outs


def encode_branch(x: Tensor, encoder: Encoder, domain: str) -> list[FeatureMaps]:
    """Run one encoding branch; ``x`` must already be on the branch's grid."""
    if domain not in (CARTESIAN, POLAR):
        raise ContractError(f"unknown domain {domain!r}")
    return [FeatureMaps(domain, i + 1, t) for i, t in enumerate(encoder(x))]


class FusionBlock(Module):
    """Channel and location importance (CBAM layout) plus the 1x1 fusion conv."""

    def __init__(self, k: int, reduction: int, rng: np.random.Generator):
        if 2 * k < reduction:
            raise ConfigError(f"fused width {2 * k} smaller than reduction ratio {reduction}")
        hidden = max(1, (2 * k) // reduction)
        self.mlp_in = Conv2d(2 * k, hidden, 1, bias=False, rng=rng)
        self.mlp_out = Conv2d(hidden, 2 * k, 1, bias=False, rng=rng)
        self.location = Conv2d(2, 1, 7, padding=3, bias=False, rng=rng)
        self.fusion = Conv2d(2 * k, k, 1, bias=True, rng=rng)

    def mlp(self, x: Tensor) -> Tensor:
        return self.mlp_out(relu(self.mlp_in(x)))


def importance_maps(f_in: Tensor, block: FusionBlock) -> ImportanceMaps:
    if f_in.shape[1] % 2:
        raise ContractError("fusion input must concatenate two equal-width maps")
    m_c = sigmoid(block.mlp(global_avg_pool(f_in)) + block.mlp(global_max_pool(f_in)))
    f_c = m_c * f_in
    m_l = sigmoid(block.location(concat([channel_mean(f_c), channel_max(f_c)], axis=1)))
    return ImportanceMaps(m_c, m_l)


def fuse_stage(f_l: FeatureMaps, g_l: FeatureMaps, block: FusionBlock,
               spec: PolarGridSpec) -> FeatureMaps:
    if f_l.domain != CARTESIAN or g_l.domain != POLAR:
        raise ContractError(f"fusion needs (cartesian, polar), got ({f_l.domain}, {g_l.domain})")
    if f_l.stage != g_l.stage or f_l.shape != g_l.shape:
        raise DimensionError(f"stage mismatch: {f_l.shape} @ {f_l.stage} vs "
                             f"{g_l.shape} @ {g_l.stage}")
    f_polar = polar_transform(f_l.tensor, spec)
    f_in = concat([f_polar, g_l.tensor], axis=1)
    maps = importance_maps(f_in, block)
    f_c = maps.channel * f_in
    f_cl = maps.location * f_c
    return FeatureMaps(POLAR, g_l.stage, block.fusion(f_cl + f_in))


class Decoder(Module):
    def __init__(self, stage_channels: Sequence[int], width: int, rng: np.random.Generator):
        self.hidden = Conv2d(sum(stage_channels), width, 3, padding=1, rng=rng)
        self.classifier = Conv2d(width, NUM_CLASSES, 1, rng=rng)
        self.classifier.weight.data *= 0.1


def decode(fused: Sequence[FeatureMaps], decoder: Decoder,
           out_size: tuple[int, int]) -> Tensor:
    if not fused:
        raise ContractError("decode needs at least one stage")
    h, w = fused[0].shape[2:]
    scaled = [bilinear_resize(f.tensor, h, w) for f in fused]
    x = relu(decoder.hidden(concat(scaled, axis=1)))
    return bilinear_resize(decoder.classifier(x), *out_size)


def stage_spec(size: int) -> PolarGridSpec:
    return PolarGridSpec.default(size)


class DDNet(Module):
    """Dual-domain network; logits live on the polar grid of the input."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.cartesian = Encoder(cfg, rng)
        self.polar = Encoder(cfg, rng)
        self.fusions = [FusionBlock(k, cfg.reduction, rng) for k in cfg.channels]
        self.decoder = Decoder(cfg.channels, cfg.decoder_width, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h, w = x.shape[2:]
        f = encode_branch(x, self.cartesian, CARTESIAN)
        g = encode_branch(polar_transform(x, PolarGridSpec.default(h, w)), self.polar, POLAR)
        fused = [fuse_stage(fl, gl, blk, PolarGridSpec.default(*fl.shape[2:]))
                 for fl, gl, blk in zip(f, g, self.fusions)]
        return decode(fused, self.decoder, (h, w))


class SingleDomainNet(Module):
    """One encoding branch with its own decoder (stage-A model and baseline)."""

    def __init__(self, cfg: ModelConfig, domain: str, seed: int = 0):
        if domain not in (CARTESIAN, POLAR):
            raise ContractError(f"unknown domain {domain!r}")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.domain = domain
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg.channels, cfg.decoder_width, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h, w = x.shape[2:]
        if self.domain == POLAR:
            x = polar_transform(x, PolarGridSpec.default(h, w))
        return decode(encode_branch(x, self.encoder, self.domain), self.decoder, (h, w))


def output_domain(model: Module) -> str:
    return model.domain if isinstance(model, SingleDomainNet) else POLAR


def ce_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Unweighted mean cross-entropy over every pixel."""
    return cross_entropy(logits, np.asarray(target, dtype=np.int64), axis=1)


def predict(x, model: Module, spec: Optional[PolarGridSpec] = None) -> np.ndarray:
    """Cartesian label masks [N,H,W] for a batch of images [N,C,H,W]."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    with no_grad():
        logits = model(x).data
    labels = np.argmax(logits, axis=1).astype(np.uint8)
    if output_domain(model) == CARTESIAN:
        return labels
    spec = spec or PolarGridSpec.default(*x.shape[2:])
    return inverse_polar_transform_labels(labels, spec)
