import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddnet.autodiff import (SGD, Conv2d, Parameter, Tensor, bilinear_resize, concat, conv2d,
                            cross_entropy, global_avg_pool, global_max_pool, grad_check,
                            load_checkpoint, log, max_pool2d, no_grad, relu, save_checkpoint,
                            sigmoid, softmax)
from ddnet.autodiff.tensor import unbroadcast
from ddnet.errors import ContractError, DataError, DimensionError, NumericError


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


# -- conv2d ----------------------------------------------------------------------------

def test_conv_zero_input_gives_bias():
    out = conv2d(t(np.zeros((1, 1, 3, 3))), t(np.random.default_rng(0).normal(size=(1, 1, 3, 3))),
                 t([1.5]), padding=1)
    assert np.all(out.data == 1.5)


def test_conv_pointwise_scale():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = conv2d(t(x), t([[[[2.0]]]]), t([0.0]))
    np.testing.assert_array_equal(out.data, 2 * x)


def test_conv_window_sum():
    out = conv2d(t(np.ones((1, 1, 4, 4))), t(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 9.0))


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    stride, pad, dil = 2, 2, 2
    out = conv2d(t(x), t(w), t(b), stride, pad, dil).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (7 + 2 * pad - dil * 2 - 1) // stride + 1
    wo = (6 + 2 * pad - dil * 2 - 1) // stride + 1
    ref = np.zeros((2, 4, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + 2 * dil + 1:dil,
                       j * stride:j * stride + 2 * dil + 1:dil]
            ref[:, :, i, j] = np.einsum("nchw,kchw->nk", patch, w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_identity_weight_is_identity():
    x = np.random.default_rng(1).normal(size=(2, 5, 4, 4))
    w = np.eye(5).reshape(5, 5, 1, 1)
    np.testing.assert_array_equal(conv2d(t(x), t(w), t(np.zeros(5))).data, x)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((1, 3, 3, 3))))


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 3))))


@settings(max_examples=30, deadline=None)
@given(h=st.integers(3, 12), k=st.integers(1, 3), stride=st.integers(1, 3),
       pad=st.integers(0, 2), dil=st.integers(1, 2))
def test_conv_output_size_formula(h, k, stride, pad, dil):
    span = dil * (k - 1) + 1
    if h + 2 * pad < span:
        return
    out = conv2d(t(np.zeros((1, 1, h, h))), t(np.zeros((1, 1, k, k))), None, stride, pad, dil)
    expect = (h + 2 * pad - dil * (k - 1) - 1) // stride + 1
    assert out.shape == (1, 1, expect, expect)


# -- activations and pools ---------------------------------------------------------------

def test_relu_values():
    np.testing.assert_array_equal(relu(t([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_global_avg_pool_value():
    out = global_avg_pool(t([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.shape == (1, 1, 1, 1) and out.item() == 2.5


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(t([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], rtol=0, atol=1e-15)


def test_softmax_sums_to_one():
    z = np.random.default_rng(2).normal(scale=20, size=(3, 3, 5, 5))
    s = softmax(t(z)).data.sum(axis=1)
    assert np.max(np.abs(s - 1)) < 1e-12


def test_sigmoid_extreme_is_finite():
    out = sigmoid(t([-800.0, 0.0, 800.0])).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_max_pool_ties_go_to_first():
    x = t(np.ones((1, 1, 2, 2)), grad=True)
    max_pool2d(x, 2).sum().backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_global_max_ties_go_to_first():
    x = t([[[[3.0, 1.0], [3.0, 3.0]]]], grad=True)
    global_max_pool(x).sum().backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_bilinear_resize_identity_and_constant():
    x = np.random.default_rng(0).normal(size=(1, 2, 5, 7))
    np.testing.assert_allclose(bilinear_resize(t(x), 5, 7).data, x, atol=1e-15)
    c = bilinear_resize(t(np.full((1, 1, 3, 3), 4.0)), 8, 11).data
    np.testing.assert_allclose(c, 4.0, atol=1e-14)


def test_broadcast_mismatch():
    with pytest.raises(DimensionError):
        t(np.zeros((2, 3))) + t(np.zeros((4,)))


def test_channel_and_location_broadcast_mul():
    f = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
    mc = np.random.default_rng(1).random((2, 3, 1, 1))
    ml = np.random.default_rng(2).random((2, 1, 4, 4))
    np.testing.assert_allclose((t(f) * t(mc) * t(ml)).data, f * mc * ml)


# -- backward --------------------------------------------------------------------------

def test_backward_linear():
    x = t([1.0, 2.0, 3.0], grad=True)
    (x * 2.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 2, 2])


def test_backward_quadratic():
    x = t([1.0, -2.0, 3.0], grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, -4, 6])


def test_backward_cross_entropy_softmax_identity():
    z = t([[0.0, 0.0, 0.0]], grad=True)
    cross_entropy(z, np.array([0])).backward()
    np.testing.assert_allclose(z.grad, [[1 / 3 - 1, 1 / 3, 1 / 3]], atol=1e-15)


def test_backward_non_scalar_rejected():
    x = t([1.0, 2.0], grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_accumulates_across_calls():
    x = t([1.0, 2.0], grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6, 6])


def test_fan_out_sums_gradients():
    x = t([2.0], grad=True)
    y = x * x
    (y + y * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [16.0])


def test_gradient_of_sum_is_sum_of_gradients():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(1, 2, 5, 5))
    w = t(rng.normal(size=(3, 2, 3, 3)))

    def f(x):
        return (conv2d(x, w, padding=1) ** 2).sum()

    def g(x):
        return (sigmoid(x) * x).sum()

    grads = []
    for fn in (f, g, lambda x: f(x) + g(x)):
        x = t(x0, grad=True)
        fn(x).backward()
        grads.append(x.grad)
    np.testing.assert_allclose(grads[2], grads[0] + grads[1], rtol=1e-12)


def test_no_grad_records_nothing():
    x = t([1.0], grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_nonfinite_forward_is_error():
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        log(t([0.0]))
    with pytest.raises(NumericError):
        Tensor([np.nan])


def test_nonfinite_backward_is_error():
    x = t([0.0], grad=True)
    y = x ** 0.5  # forward is 0, derivative is infinite
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        y.sum().backward()


@settings(max_examples=40, deadline=None)
@given(shape=st.lists(st.integers(1, 4), min_size=1, max_size=4), data=st.data())
def test_unbroadcast_inverts_broadcast(shape, data):
    small = tuple(data.draw(st.sampled_from([1, n])) for n in shape)
    g = np.ones(tuple(shape))
    out = unbroadcast(g, small)
    assert out.shape == small
    assert out.sum() == g.sum()


# -- grad_check ------------------------------------------------------------------------

def test_grad_check_linear_exact():
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert grad_check(lambda a: a.sum(), x) < 1e-10


def test_grad_check_relu_off_kink():
    rng = np.random.default_rng(1)
    x = rng.normal(size=50)
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    assert grad_check(lambda a: relu(a).sum(), x) < 1e-6


def test_grad_check_two_layer_conv_net():
    rng = np.random.default_rng(2)
    c1 = Conv2d(1, 4, 3, padding=1, rng=rng)
    c2 = Conv2d(4, 3, 3, padding=1, rng=rng)
    target = rng.integers(0, 3, size=(1, 8, 8))
    x = rng.normal(size=(1, 1, 8, 8))
    assert grad_check(lambda a: cross_entropy(c2(relu(c1(a))), target), x) < 1e-4


def test_grad_check_eps_range():
    with pytest.raises(ContractError):
        grad_check(lambda a: a.sum(), np.zeros(3), eps=1e-8)
    with pytest.raises(ContractError):
        grad_check(lambda a: a.sum(), np.zeros(3), eps=1e-2)


def test_grad_check_detects_wrong_gradient():
    def broken(a):
        out = Tensor._from_op(a.data ** 2, (a,), lambda g: (g * 0.0,), "broken")
        return out.sum()
    assert grad_check(broken, np.array([1.0, 2.0])) > 0.5


# -- sgd -------------------------------------------------------------------------------

def _param(value, grad):
    p = Parameter(np.array(value, dtype=float))
    p.grad = np.array(grad, dtype=float)
    return p


def test_sgd_plain_step():
    p = _param([1.0, 2.0], [0.5, -1.0])
    SGD([p], lr=1.0, momentum=0.0, weight_decay=0.0).step()
    np.testing.assert_array_equal(p.data, [0.5, 3.0])
    assert p.grad is None


def test_sgd_momentum_two_steps():
    g = 0.25
    p = _param([0.0], [g])
    opt = SGD([p], lr=1.0, momentum=0.9, weight_decay=0.0)
    opt.step()
    p.grad = np.array([g])
    opt.step()
    np.testing.assert_allclose(p.data, [-(g + 1.9 * g)], rtol=1e-15)


def test_sgd_weight_decay_value():
    p = _param([1.0], [0.0])
    SGD([p], lr=1.0, momentum=0.0, weight_decay=0.00004).step()
    assert p.data[0] == pytest.approx(0.99996, abs=1e-15)


def test_sgd_missing_grad():
    p = Parameter(np.zeros(2))
    with pytest.raises(ContractError):
        SGD([p], lr=0.1).step()


# -- checkpoint ------------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=5),
              "scalar": np.array(math.pi), "ünï": np.array([1e-300, -0.0, 7.0])}
    save_checkpoint(tmp_path / "m.ddnt", params)
    back = load_checkpoint(tmp_path / "m.ddnt")
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == params[k].shape
        assert back[k].tobytes() == np.asarray(params[k], dtype="<f8").tobytes()


def test_checkpoint_layout(tmp_path):
    save_checkpoint(tmp_path / "m.ddnt", {"w": np.array([[1.0, 2.0]])})
    raw = (tmp_path / "m.ddnt").read_bytes()
    assert raw[:4] == b"DDNT"
    assert raw[4:8] == (1).to_bytes(4, "little") and raw[8:12] == (1).to_bytes(4, "little")
    assert raw[12:16] == (1).to_bytes(4, "little") and raw[16:17] == b"w"
    assert raw[17:21] == (2).to_bytes(4, "little")
    assert len(raw) == 21 + 16 + 16


def test_checkpoint_rejects_bad_files(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(DataError, match="byte 0"):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint(tmp_path / "ok", {"w": np.ones(4)})
    (tmp_path / "trunc").write_bytes((tmp_path / "ok").read_bytes()[:-3])
    with pytest.raises(DataError, match="byte"):
        load_checkpoint(tmp_path / "trunc")


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(0)
    a, b = Conv2d(2, 3, 3, rng=rng), Conv2d(2, 3, 3, rng=rng)
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": a.weight.data})


def test_concat_grad_routes_to_parts():
    a, b = t(np.ones((1, 2, 2, 2)), grad=True), t(np.ones((1, 1, 2, 2)), grad=True)
    (concat([a, b], axis=1) * t(np.arange(3.0).reshape(1, 3, 1, 1))).sum().backward()
    np.testing.assert_array_equal(a.grad[0, :, 0, 0], [0, 1])
    np.testing.assert_array_equal(b.grad[0, 0], np.full((2, 2), 2.0))
