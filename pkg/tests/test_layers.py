import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import check_gradients
from oracles import conv1d_direct, conv1d_transpose_direct, maxpool_direct
from tcgan import layers as L
from tcgan.tensor import Tensor


@st.composite
def conv_case(draw):
    return dict(
        batch=draw(st.integers(1, 2)),
        length=draw(st.integers(1, 9)),
        cin=draw(st.integers(1, 3)),
        cout=draw(st.integers(1, 3)),
        kw=draw(st.integers(1, 5)),
        stride=draw(st.integers(1, 3)),
        seed=draw(st.integers(0, 2**31 - 1)),
    )


@settings(max_examples=40, deadline=None)
@given(conv_case())
def test_conv1d_matches_direct_sum(c):
    r = np.random.default_rng(c["seed"])
    x = r.normal(size=(c["batch"], c["length"], c["cin"]))
    w = r.normal(size=(c["kw"], c["cin"], c["cout"]))
    b = r.normal(size=c["cout"])
    got = L.conv1d(Tensor(x), Tensor(w), Tensor(b), c["stride"]).data
    np.testing.assert_allclose(got, conv1d_direct(x, w, b, c["stride"]), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(conv_case())
def test_conv1d_transpose_matches_matrix_transpose(c):
    r = np.random.default_rng(c["seed"])
    y = r.normal(size=(c["batch"], c["length"], c["cin"]))
    w = r.normal(size=(c["kw"], c["cin"], c["cout"]))
    b = r.normal(size=c["cout"])
    got = L.conv1d_transpose(Tensor(y), Tensor(w), Tensor(b), c["stride"]).data
    assert got.shape == (c["batch"], c["length"] * c["stride"], c["cout"])
    np.testing.assert_allclose(got, conv1d_transpose_direct(y, w, b, c["stride"]), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(conv_case())
def test_conv_transpose_adjoint_identity(c):
    r = np.random.default_rng(c["seed"])
    s = c["stride"]
    x = r.normal(size=(c["batch"], c["length"] * s, c["cout"]))
    y = r.normal(size=(c["batch"], c["length"], c["cin"]))
    w = r.normal(size=(c["kw"], c["cin"], c["cout"]))
    conv = L.conv1d(Tensor(x), Tensor(np.swapaxes(w, 1, 2).copy()), None, s).data
    tconv = L.conv1d_transpose(Tensor(y), Tensor(w), None, s).data
    assert np.sum(conv * y) == pytest.approx(np.sum(x * tconv), abs=1e-10)


def test_same_ceil_padding_examples():
    # out = ceil(L/s); odd total padding goes to the right
    assert L.same_ceil_padding(100, 10, 2) == (50, 4, 4)
    assert L.same_ceil_padding(25, 10, 2) == (13, 4, 5)
    assert L.same_ceil_padding(3, 10, 2) == (2, 4, 5)
    assert L.same_ceil_padding(7, 1, 3) == (3, 0, 0)


def test_generator_upsampling_crop_is_centered():
    # a length-L input upsampled x2 with w=10 keeps L*2 samples of the 2L+8 support
    y = np.zeros((1, 3, 1))
    y[0, 0, 0] = 1.0
    w = np.arange(1, 11, dtype=float).reshape(10, 1, 1)
    out = L.conv1d_transpose(Tensor(y), Tensor(w), None, 2).data[0, :, 0]
    # full support of x[0]: positions 0..9 carry w[9..0]; crop drops 4 on the left
    np.testing.assert_array_equal(out, [6, 5, 4, 3, 2, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 9), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3),
       st.integers(0, 2**31 - 1))
def test_maxpool_matches_enumeration(batch, length, c, pool_w, stride, seed):
    pool_w = min(pool_w, length)
    x = np.random.default_rng(seed).normal(size=(batch, length, c))
    np.testing.assert_array_equal(L.maxpool1d(Tensor(x), pool_w, stride).data, maxpool_direct(x, pool_w, stride))


def test_maxpool_rejects_wide_window():
    with pytest.raises(ValueError):
        L.maxpool1d(Tensor(np.zeros((1, 1, 2))), 2, 1)


def test_maxpool_tie_gradient_goes_to_first():
    x = Tensor(np.array([[[2.0], [2.0], [1.0]]]), requires_grad=True)
    L.maxpool1d(x, 2, 1).sum().backward()
    assert x.grad[0, :, 0].tolist() == [1.0, 1.0, 0.0]


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_gradients(stride, rng):
    x, w, b = rng.normal(size=(2, 7, 2)), rng.normal(size=(4, 2, 3)), rng.normal(size=3)
    check_gradients(lambda a, k, c: L.conv1d(a, k, c, stride), [x, w, b])
    y = rng.normal(size=(2, 3, 2))
    check_gradients(lambda a, k, c: L.conv1d_transpose(a, k, c, stride), [y, w, b])


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(training, rng):
    x = rng.normal(size=(4, 3, 2))
    rm, rv = rng.normal(size=2), rng.uniform(0.5, 2, size=2)

    def bn(a, g, b):
        return L.batchnorm1d(a, g, b, rm.copy(), rv.copy(), training)

    check_gradients(bn, [x, rng.normal(size=2), rng.normal(size=2)])


def test_activation_and_dense_gradients(rng):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # stay away from the kinks
    for fn in (L.relu, L.leaky_relu, L.sigmoid, L.softmax, L.log_softmax):
        check_gradients(fn, [x])
    check_gradients(L.dense, [x, rng.normal(size=(4, 2)), rng.normal(size=2)])
    check_gradients(lambda a: L.maxpool1d(a, 2, 1), [rng.normal(size=(2, 5, 3))])


def test_batchnorm_train_mode_statistics(rng):
    bn = L.BatchNorm1D(3)
    x = rng.normal(3.0, 5.0, size=(16, 10, 3))
    y = bn(Tensor(x), training=True).data
    np.testing.assert_allclose(y.mean(axis=(0, 1)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 1)), 1, atol=1e-4)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 1)))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 1)))


def test_batchnorm_eval_and_frozen_stats(rng):
    bn = L.BatchNorm1D(2)
    x = rng.normal(size=(4, 5, 2))
    bn(Tensor(x), training=True, update_stats=False)
    np.testing.assert_array_equal(bn.running_mean, 0)
    np.testing.assert_array_equal(bn.running_var, 1)
    y = bn(Tensor(x), training=False).data
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5))
    with pytest.raises(ValueError):
        bn(Tensor(np.ones((1, 1, 2))), training=True)


def test_sigmoid_is_stable_for_large_inputs():
    out = L.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


def test_leaky_relu_slope():
    out = L.leaky_relu(Tensor(np.array([-2.0, 3.0]))).data
    np.testing.assert_allclose(out, [-0.4, 3.0])


def test_layer_init_and_parameter_names():
    r = np.random.default_rng(0)
    layers = {"conv1": L.Conv1D(1, 8, 10, 2, r), "bn1": L.BatchNorm1D(8), "head": L.Dense(16, 1, r)}
    params = L.collect_parameters(layers)
    assert set(params) == {"conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta", "head.weight", "head.bias"}
    assert abs(params["conv1.weight"].data.std() - 0.02) < 0.01
    assert not params["conv1.bias"].data.any()
    assert set(L.collect_buffers(layers)) == {"bn1.running_mean", "bn1.running_var"}


def test_conv_channel_mismatch_raises():
    with pytest.raises(ValueError):
        L.conv1d(Tensor(np.zeros((1, 5, 2))), Tensor(np.zeros((3, 1, 1))))
