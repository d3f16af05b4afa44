"""Finite-difference checks of every differentiable operation and of the full model."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .autodiff import (Tensor, bilinear_resize, channel_max, channel_mean, concat, conv2d,
                       cross_entropy, global_avg_pool, global_max_pool, grad_check,
                       grad_check_param, log_softmax, max_pool2d, relu, sigmoid, softmax)
from .model import DDNet, FusionBlock, ModelConfig, ce_loss, fuse_stage, FeatureMaps
from .polar import PolarGridSpec, inverse_polar_transform, polar_transform

EPS = 1e-5


def _away_from_kinks(x: np.ndarray, margin: float = 10 * EPS) -> np.ndarray:
    return np.where(np.abs(x) < margin, np.sign(x + 1e-30) * (margin + np.abs(x)), x)


def _distinct(rng: np.random.Generator, shape) -> np.ndarray:
    """Random values with well separated entries, so max/argmax cannot flip."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.01 + rng.uniform(-0.001, 0.001, size=n)
    return vals.reshape(shape) - vals.mean()


def op_cases(rng: np.random.Generator) -> Iterable[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    x = rng.standard_normal((2, 3, 6, 6))
    proj = Tensor(rng.standard_normal((2, 3, 6, 6)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    b = Tensor(rng.standard_normal(4))
    yield "conv2d/input", lambda t: (conv2d(t, w, b, 1, 1) ** 2).sum(), x
    yield "conv2d/strided", lambda t: (conv2d(t, w, b, 2, 1) ** 2).sum(), x
    yield "conv2d/dilated", lambda t: (conv2d(t, w, None, 1, 2, 2) ** 2).sum(), x
    yield "conv2d/weight", lambda t: (conv2d(Tensor(x), t, b, 1, 1) ** 2).sum(), w.data
    yield "conv2d/bias", lambda t: (conv2d(Tensor(x), w, t, 1, 1) ** 2).sum(), b.data
    yield "relu", lambda t: (relu(t) * proj).sum(), _away_from_kinks(x)
    yield "sigmoid", lambda t: (sigmoid(t) * proj).sum(), x
    yield "add/mul broadcast", \
        lambda t: ((t * Tensor(x[:, :, :1, :1]) + t[:, :1]) * proj).sum(), x
    xd = _distinct(rng, (2, 3, 6, 6))
    yield "max_pool2d", lambda t: (max_pool2d(t, 2) ** 2).sum(), xd
    yield "global_avg_pool", lambda t: (global_avg_pool(t) ** 2).sum(), x
    yield "global_max_pool", lambda t: (global_max_pool(t) ** 2).sum(), xd
    yield "channel_mean/max", lambda t: (channel_mean(t) * channel_max(t)).sum(), xd
    yield "bilinear_resize", lambda t: (bilinear_resize(t, 11, 4) ** 2).sum(), x
    yield "concat", lambda t: (concat([t, t * 2.0], axis=1) * concat([proj, proj], 1)).sum(), x
    yield "softmax", lambda t: (softmax(t) * proj).sum(), x
    yield "log_softmax", lambda t: (log_softmax(t) * proj).sum(), x
    target = rng.integers(0, 3, size=(2, 6, 6))
    yield "cross_entropy", lambda t: cross_entropy(t, target), x
    spec = PolarGridSpec.default(6)
    yield "polar_transform", lambda t: (polar_transform(t, spec) * proj).sum(), x
    yield "inverse_polar_transform", lambda t: (inverse_polar_transform(t, spec) * proj).sum(), x

    k = 4
    block = FusionBlock(k, 8, rng)
    for conv in (block.mlp_in, block.mlp_out, block.location):
        conv.weight.data *= 3.0
    spec8 = PolarGridSpec.default(8)
    f0 = rng.standard_normal((1, k, 8, 8))
    g0 = rng.standard_normal((1, k, 8, 8))
    cart = lambda a: FeatureMaps("cartesian", 1, a)
    pol = lambda a: FeatureMaps("polar", 1, a)
    yield "fuse_stage/cartesian", \
        lambda t: (fuse_stage(cart(t), pol(Tensor(g0)), block, spec8).tensor ** 2).sum(), f0
    yield "fuse_stage/polar", \
        lambda t: (fuse_stage(cart(Tensor(f0)), pol(t), block, spec8).tensor ** 2).sum(), g0


def run_op_checks(seed: int, eps: float = EPS) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    return [(name, grad_check(f, x, eps)) for name, f, x in op_cases(rng)]


def run_model_check(seed: int, size: int = 16, channels=(4, 8), coords: int = 12,
                    eps: float = EPS) -> list[tuple[str, float]]:
    """ce_loss(forward) against every parameter group of a small DDNet."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_size=size, channels=tuple(channels), decoder_width=8)
    model = DDNet(cfg, seed=seed)
    for p in model.parameters():
        if p.ndim == 1:
            p.data = rng.normal(0.0, 0.1, size=p.shape)
    x = Tensor(rng.random((1, 3, size, size)))
    target = rng.integers(0, 3, size=(1, size, size))

    def loss():
        return ce_loss(model(x), target)

    out = []
    for name, p in model.named_parameters():
        out.append((f"model/{name}", grad_check_param(loss, p, eps, coords=coords, rng=rng)))
    return out
