import numpy as np
import numpy.testing as npt
import pytest

from dropgraph.errors import ContractError, DimensionError
from dropgraph.gradcheck import grad_check
from dropgraph.nn import (
    BatchNorm2d,
    Conv2d,
    Linear,
    batchnorm_train,
    conv2d,
    cross_entropy,
    global_avg_pool,
)
from dropgraph.rng import RngStream
from dropgraph.tensor import Tensor

RNG = np.random.default_rng(20240302)


def conv_naive(x, k, b, stride, pad):
    """Six-loop reference convolution; the oracle for conv2d."""
    n, cin, h, w = x.shape
    cout, _, kk, _ = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kk) // stride + 1
    ow = (w + 2 * pad - kk) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kk):
                            for v in range(kk):
                                acc += xp[ni, ci, oy * stride + u, ox * stride + v] * k[co, ci, u, v]
                    out[ni, co, oy, ox] = acc + (0.0 if b is None else b[co])
    return out


# -- conv2d ---------------------------------------------------------------------


def test_conv_1x1_identity_kernel():
    x = Tensor(RNG.normal(size=(2, 3, 5, 5)))
    kernel = Tensor(np.eye(3).reshape(3, 3, 1, 1))
    out = conv2d(x, kernel, Tensor(np.zeros(3)))
    npt.assert_allclose(out.data, x.data, atol=1e-15)


def test_conv_zero_kernel_gives_bias():
    x = Tensor(RNG.normal(size=(2, 3, 4, 4)))
    bias = np.array([1.0, -2.0])
    out = conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(bias), padding=1)
    want = np.broadcast_to(bias[None, :, None, None], (2, 2, 4, 4))
    npt.assert_array_equal(out.data, want)


def test_conv_ramp_image_sliding_window():
    x = np.arange(25.0).reshape(1, 1, 5, 5)
    k = RNG.normal(size=(1, 1, 3, 3))
    out = conv2d(Tensor(x), Tensor(k), None).data
    npt.assert_allclose(out, conv_naive(x, k, None, 1, 0), rtol=1e-12)


def test_conv_matches_naive_on_200_random_cases():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2, 3]))
        pad = int(rng.choice([0, 1, 2]))
        h = int(rng.integers(k, k + 5))
        w = int(rng.integers(k, k + 5))
        if h + 2 * pad < k or w + 2 * pad < k:
            continue
        x = rng.normal(size=(n, cin, h, w))
        kk = rng.normal(size=(cout, cin, k, k))
        b = rng.normal(size=cout)
        got = conv2d(Tensor(x), Tensor(kk), Tensor(b), stride, pad).data
        want = conv_naive(x, kk, b, stride, pad)
        scale = max(1.0, np.abs(want).max())
        worst = max(worst, np.abs(got - want).max() / scale)
    assert worst <= 1e-10


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError, match="channel"):
        conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 4, 3, 3))), None)


def test_conv_kernel_larger_than_padded_input():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), None)


@pytest.mark.parametrize("stride,pad,h", [(1, 1, 5), (2, 0, 7), (2, 1, 6), (3, 0, 8)])
def test_conv_gradients(stride, pad, h):
    x = Tensor(RNG.normal(size=(2, 3, h, h)), requires_grad=True)
    k = Tensor(RNG.normal(size=(4, 3, 3, 3)), requires_grad=True)
    b = Tensor(RNG.normal(size=(4,)), requires_grad=True)
    assert grad_check(lambda t: (conv2d(t, k, b, stride, pad) ** 2).sum(), x) <= 1e-5
    assert grad_check(lambda t: (conv2d(x, t, b, stride, pad) ** 2).sum(), k) <= 1e-5
    assert grad_check(lambda t: (conv2d(x, k, t, stride, pad) ** 2).sum(), b) <= 1e-5


# -- batch norm ---------------------------------------------------------------------


def test_batchnorm_train_normalizes():
    x = Tensor(RNG.normal(size=(8, 3, 6, 6)) * 4 + 2)
    g = Tensor(np.ones(3))
    b = Tensor(np.zeros(3))
    out, m, v = batchnorm_train(x, g, b, 1e-5)
    npt.assert_allclose(out.data.mean(axis=(0, 2, 3)), np.zeros(3), atol=1e-12)
    npt.assert_allclose(out.data.std(axis=(0, 2, 3)), np.ones(3), atol=1e-3)
    npt.assert_allclose(m, x.data.mean(axis=(0, 2, 3)), atol=1e-12)


def test_batchnorm_gradients():
    x = Tensor(RNG.normal(size=(4, 3, 5, 5)), requires_grad=True)
    g = Tensor(RNG.normal(size=3) + 1.5, requires_grad=True)
    b = Tensor(RNG.normal(size=3), requires_grad=True)
    assert grad_check(lambda t: (batchnorm_train(t, g, b, 1e-5)[0] ** 2).sum(), x) <= 1e-5
    assert grad_check(lambda t: (batchnorm_train(x, t, b, 1e-5)[0] ** 2).sum(), g) <= 1e-5
    assert grad_check(lambda t: (batchnorm_train(x, g, t, 1e-5)[0] ** 2).sum(), b) <= 1e-5


def test_batchnorm_eval_is_affine_and_stateless():
    bn = BatchNorm2d(3)
    for _ in range(5):
        bn(Tensor(RNG.normal(size=(8, 3, 4, 4)) * 2 + 1))
    assert (bn.running_var > 0).all()
    bn.eval()
    rm, rv = bn.running_mean.copy(), bn.running_var.copy()
    x = RNG.normal(size=(4, 3, 4, 4))
    y1 = bn(Tensor(x)).data
    y2 = bn(Tensor(x)).data
    npt.assert_array_equal(y1, y2)
    npt.assert_array_equal(bn.running_mean, rm)
    npt.assert_array_equal(bn.running_var, rv)
    # affine: f(a*x1 + (1-a)*x2) == a*f(x1) + (1-a)*f(x2)
    x2 = RNG.normal(size=(4, 3, 4, 4))
    lhs = bn(Tensor(0.3 * x + 0.7 * x2)).data
    rhs = 0.3 * bn(Tensor(x)).data + 0.7 * bn(Tensor(x2)).data
    npt.assert_allclose(lhs, rhs, atol=1e-10)


def test_batchnorm_momentum_bounds():
    with pytest.raises(ContractError):
        BatchNorm2d(3, momentum=1.5)


# -- cross entropy ----------------------------------------------------------------


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((6, 4))), np.zeros(6, dtype=int))
    assert abs(loss.item() - 1.3862943611198906) <= 1e-12


def test_cross_entropy_frozen_value():
    loss = cross_entropy(Tensor([[1.0, 2.0, 3.0]]), np.array([2]))
    assert abs(loss.item() - 0.40760596444438030) <= 1e-13


def test_cross_entropy_margin_limit():
    logits = np.zeros((1, 3))
    logits[0, 1] = 50.0
    loss = cross_entropy(Tensor(logits), np.array([1]))
    assert 0.0 <= loss.item() < 1e-12


def test_cross_entropy_nonnegative():
    for _ in range(30):
        logits = Tensor(RNG.normal(size=(5, 6)) * 3)
        labels = RNG.integers(0, 6, size=5)
        assert cross_entropy(logits, labels).item() >= 0.0


def test_cross_entropy_label_range():
    with pytest.raises(ContractError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_cross_entropy_gradient():
    logits = Tensor(RNG.normal(size=(6, 4)), requires_grad=True)
    labels = RNG.integers(0, 4, size=6)
    assert grad_check(lambda t: cross_entropy(t, labels), logits) <= 1e-5


# -- pooling ------------------------------------------------------------------------


def test_global_avg_pool_constant():
    out = global_avg_pool(Tensor(np.full((2, 3, 4, 4), 2.5)))
    npt.assert_array_equal(out.data, np.full((2, 3), 2.5))


def test_global_avg_pool_hand_case():
    out = global_avg_pool(Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)))
    npt.assert_array_equal(out.data, [[2.5]])


def test_global_avg_pool_matches_sum_oracle():
    x = RNG.normal(size=(3, 5, 4, 6))
    got = global_avg_pool(Tensor(x)).data
    want = x.sum(axis=(2, 3)) / (4 * 6)
    npt.assert_allclose(got, want, rtol=1e-12)


# -- layers ------------------------------------------------------------------------


def test_linear_layer_forward_and_grad():
    layer = Linear(5, 3, RngStream(0, ("lin",)))
    x = Tensor(RNG.normal(size=(4, 5)), requires_grad=True)
    out = layer(x)
    npt.assert_allclose(out.data, x.data @ layer.weight.data + layer.bias.data, rtol=1e-12)
    assert grad_check(lambda t: (layer(t) ** 2).sum(), x) <= 1e-5


def test_conv_layer_output_shape():
    layer = Conv2d(3, 8, 3, RngStream(0, ("c",)), stride=2, padding=1)
    out = layer(Tensor(RNG.normal(size=(2, 3, 9, 9))))
    assert out.data.shape == (2, 8, 5, 5)


def test_module_collects_parameters():
    layer = Conv2d(3, 8, 3, RngStream(0, ("c",)))
    names = dict(layer.named_parameters())
    assert set(names) == {"kernel", "bias"}
