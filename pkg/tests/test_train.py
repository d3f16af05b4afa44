import numpy as np
import pytest

from ddnet.data import SynthParams, generate
from ddnet.errors import DataError
from ddnet.model import CARTESIAN, POLAR, ModelConfig
from ddnet.train import (BatchStream, TrainConfig, _branch_model, init_model, predict_samples,
                         targets_for, train_single_domain, train_two_stage)

SMALL = ModelConfig(input_size=32, channels=(4, 8, 8), decoder_width=8)


@pytest.fixture(scope="module")
def samples():
    return generate(SynthParams(size=32, disc_radius=(0.3, 0.35)), 10)


def state(model):
    return {k: v.copy() for k, v in model.state_dict().items()}


def test_zero_iterations_returns_init(samples):
    cfg = TrainConfig(iterations_a=0, iterations_b=0, seed=4)
    res = train_two_stage(samples, SMALL, cfg)
    ref = state(init_model(SMALL, 4))
    got = state(res.model)
    assert ref.keys() == got.keys()
    for k in ref:
        np.testing.assert_array_equal(ref[k], got[k])
    assert res.history == []


def test_empty_dataset():
    with pytest.raises(DataError):
        train_two_stage([], SMALL, TrainConfig())


def test_loss_decreases(samples):
    # single-step losses are noisy, so compare windows and the fitted trend
    cfg = TrainConfig(iterations_a=0, iterations_b=50, lr_stage_b=0.01, augment=False)
    losses = train_two_stage(samples, SMALL, cfg, pretrain=False).losses("B")
    assert len(losses) == 50
    assert losses[-10:].mean() < losses[:10].mean()
    assert np.polyfit(np.arange(50), losses, 1)[0] < 0


def test_training_is_deterministic(samples):
    cfg = TrainConfig(iterations_a=3, iterations_b=3, seed=9)
    a = train_two_stage(samples, SMALL, cfg)
    b = train_two_stage(samples, SMALL, cfg)
    assert a.history == b.history
    for k, v in state(a.model).items():
        np.testing.assert_array_equal(v, b.model.state_dict()[k])


def test_pretraining_changes_only_encoders(samples):
    cfg = TrainConfig(iterations_a=2, iterations_b=0)
    res = train_two_stage(samples, SMALL, cfg)
    init = init_model(SMALL, 0)
    assert [s for s, _, _ in res.history] == ["A-cartesian"] * 2 + ["A-polar"] * 2
    assert not np.array_equal(res.model.cartesian.state_dict()[next(iter(
        res.model.cartesian.state_dict()))], next(iter(init.cartesian.state_dict().values())))
    for k, v in init.decoder.state_dict().items():
        np.testing.assert_array_equal(v, res.model.decoder.state_dict()[k])


def test_branch_model_copies_encoder():
    model = init_model(SMALL, 1)
    net = _branch_model(model, POLAR, seed=5)
    for k, v in model.polar.state_dict().items():
        np.testing.assert_array_equal(v, net.encoder.state_dict()[k])
    # a copy, not a shared reference
    next(iter(net.encoder.parameters())).data += 1
    assert not np.array_equal(next(iter(net.encoder.parameters())).data,
                              next(iter(model.polar.parameters())).data)


def test_batch_stream_visits_every_sample_once_per_epoch(samples):
    stream = BatchStream(samples, 5, np.random.default_rng(0), use_augment=False)
    seen = []
    for _ in range(2):
        _, masks = stream.next()
        seen += [m.tobytes() for m in masks]
    assert sorted(seen) == sorted(s.mask.tobytes() for s in samples)


def test_batch_stream_empty():
    with pytest.raises(DataError):
        BatchStream([], 2, np.random.default_rng(0))


def test_targets_for_domains(samples):
    masks = np.stack([s.mask for s in samples[:2]])
    assert targets_for(masks, CARTESIAN) is masks
    pol = targets_for(masks, POLAR)
    assert pol.shape == masks.shape and pol[:, 0].max() == 2  # centre row is cup


def test_single_domain_and_prediction(samples):
    cfg = TrainConfig(augment=False)
    net, hist = train_single_domain(samples, SMALL, POLAR, cfg, [(1, 0.007), (1, 0.001)])
    assert [h[0] for h in hist] == ["single-polar-0", "single-polar-1"]
    preds = predict_samples(net, samples[:3], batch=2)
    assert len(preds) == 3 and preds[0].shape == (32, 32) and preds[0].dtype == np.uint8


def test_matched_single_config_balances_parameters():
    from ddnet.model import DDNet, SingleDomainNet
    from ddnet.train import matched_single_config, param_count
    cfg = ModelConfig(input_size=64)
    wide = matched_single_config(cfg)
    ratio = param_count(SingleDomainNet(wide, CARTESIAN)) / param_count(DDNet(cfg))
    assert abs(ratio - 1) < 0.05 and wide.channels[0] > cfg.channels[0]


def test_mirrored_schedule_counts_both_branches():
    from ddnet.train import mirrored_schedule
    cfg = TrainConfig(iterations_a=30, iterations_b=70)
    assert mirrored_schedule(cfg) == [(60, cfg.lr_stage_a), (70, cfg.lr_stage_b)]
