"""Two-stage training: single-domain branch pretraining, then the full DDNet."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import SGD, Module, Tensor
from .data import Sample, augment, stack_batch
from .errors import DataError
from .metrics import MetricsReport, evaluate
from .model import (CARTESIAN, POLAR, DDNet, ModelConfig, SingleDomainNet, ce_loss,
                    output_domain, predict)
from .polar import PolarGridSpec, polar_transform_labels

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr_stage_a: float = 0.007
    lr_stage_b: float = 0.001
    iterations_a: int = 100
    iterations_b: int = 2000
    momentum: float = 0.9
    weight_decay: float = 0.00004
    seed: int = 0
    augment: bool = True
    warm_window: int = 25


@dataclass
class TrainResult:
    model: DDNet
    history: list[tuple[str, int, float]] = field(default_factory=list)

    def losses(self, stage: str) -> np.ndarray:
        return np.array([l for s, _, l in self.history if s == stage])


class BatchStream:
    """Epoch-shuffled mini-batches with optional augmentation."""

    def __init__(self, samples: Sequence[Sample], batch_size: int, rng: np.random.Generator,
                 use_augment: bool = True):
        if not samples:
            raise DataError("empty dataset")
        self.samples = list(samples)
        self.batch_size = batch_size
        self.rng = rng
        self.use_augment = use_augment
        self._order: list[int] = []

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        picked = []
        while len(picked) < self.batch_size:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.samples)))
            picked.append(self.samples[self._order.pop()])
        if self.use_augment:
            picked = [augment(s, self.rng) for s in picked]
        return stack_batch(picked)


def targets_for(masks: np.ndarray, domain: str) -> np.ndarray:
    if domain == CARTESIAN:
        return masks
    spec = PolarGridSpec.default(*masks.shape[1:])
    return polar_transform_labels(masks, spec)


def fit(model: Module, stream: BatchStream, iterations: int, lr: float, cfg: TrainConfig,
        stage: str, history: list, callback: Optional[Callable] = None) -> None:
    if iterations <= 0:
        return
    opt = SGD(model.parameters(), lr=lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay)
    domain = output_domain(model)
    for it in range(iterations):
        images, masks = stream.next()
        loss = ce_loss(model(Tensor(images)), targets_for(masks, domain))
        loss.backward()
        opt.step()
        history.append((stage, it, loss.item()))
        if callback is not None:
            callback(stage, it, loss.item())
        if it % 100 == 0 or it == iterations - 1:
            log.info("%s iter %d/%d loss %.4f", stage, it + 1, iterations, loss.item())


def seed_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def init_model(model_cfg: ModelConfig, seed: int) -> DDNet:
    return DDNet(model_cfg, seed=int(np.random.SeedSequence(seed).generate_state(1)[0]))


def _branch_model(ddnet: DDNet, domain: str, seed: int) -> SingleDomainNet:
    net = SingleDomainNet(ddnet.cfg, domain, seed=seed)
    src = ddnet.cartesian if domain == CARTESIAN else ddnet.polar
    net.encoder.load_state_dict(src.state_dict())
    return net


def pretrain_branches(model: DDNet, samples: Sequence[Sample], cfg: TrainConfig,
                      history: list, callback: Optional[Callable] = None) -> None:
    """Stage A: each branch trains with a temporary decoder, weights copied back."""
    rngs = seed_streams(cfg.seed, 4)
    for k, domain in enumerate((CARTESIAN, POLAR)):
        net = _branch_model(model, domain, seed=int(rngs[k].integers(2 ** 31)))
        stream = BatchStream(samples, cfg.batch_size, rngs[k + 2], cfg.augment)
        fit(net, stream, cfg.iterations_a, cfg.lr_stage_a, cfg, f"A-{domain}", history,
            callback)
        dst = model.cartesian if domain == CARTESIAN else model.polar
        dst.load_state_dict(net.encoder.state_dict())


def train_two_stage(samples: Sequence[Sample], model_cfg: ModelConfig, cfg: TrainConfig,
                    callback: Optional[Callable] = None, pretrain: bool = True) -> TrainResult:
    if not samples:
        raise DataError("empty dataset")
    model = init_model(model_cfg, cfg.seed)
    result = TrainResult(model)
    if pretrain:
        pretrain_branches(model, samples, cfg, result.history, callback)
    stream = BatchStream(samples, cfg.batch_size, seed_streams(cfg.seed + 1, 1)[0], cfg.augment)
    fit(model, stream, cfg.iterations_b, cfg.lr_stage_b, cfg, "B", result.history, callback)
    return result


def param_count(model: Module) -> int:
    return sum(p.data.size for p in model.parameters())


def matched_single_config(model_cfg: ModelConfig) -> ModelConfig:
    """Widen the encoder so one branch has about as many parameters as DDNet."""
    target = param_count(DDNet(model_cfg))
    best, best_gap = model_cfg, None
    for pct in range(100, 201, 5):
        widths = tuple(max(1, round(c * pct / 100)) for c in model_cfg.channels)
        cand = replace(model_cfg, channels=widths)
        gap = abs(param_count(SingleDomainNet(cand, CARTESIAN)) - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = cand, gap
    return best


def mirrored_schedule(cfg: TrainConfig) -> list[tuple[int, float]]:
    """The two-stage schedule as (iterations, lr) phases for one network.

    Stage A trains two branches, so a single network gets twice its steps.
    """
    return [(2 * cfg.iterations_a, cfg.lr_stage_a), (cfg.iterations_b, cfg.lr_stage_b)]


def train_single_domain(samples: Sequence[Sample], model_cfg: ModelConfig, domain: str,
                        cfg: TrainConfig, schedule: Sequence[tuple[int, float]]
                        ) -> tuple[SingleDomainNet, list]:
    """Single-branch baseline trained from scratch through ``(iterations, lr)`` phases."""
    rngs = seed_streams(cfg.seed + 2, 2)
    net = SingleDomainNet(model_cfg, domain, seed=int(rngs[0].integers(2 ** 31)))
    stream = BatchStream(samples, cfg.batch_size, rngs[1], cfg.augment)
    history: list = []
    for k, (iterations, lr) in enumerate(schedule):
        fit(net, stream, iterations, lr, cfg, f"single-{domain}-{k}", history)
    return net, history


def predict_samples(model: Module, samples: Sequence[Sample], batch: int = 8) -> list[np.ndarray]:
    out = []
    for i in range(0, len(samples), batch):
        images, _ = stack_batch(samples[i:i + batch])
        out.extend(predict(images, model))
    return out


def evaluate_model(model: Module, samples: Sequence[Sample]) -> MetricsReport:
    preds = predict_samples(model, samples)
    return evaluate(preds, [s.mask for s in samples], [s.true_cdr for s in samples],
                    [s.name for s in samples])
