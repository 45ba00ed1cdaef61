import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hcpnet.errors import ConfigError, DataError, ShapeError, CheckpointFormatError, StageMismatchError
from hcpnet.nn import functional as F
from hcpnet.nn import checkpoint as ckio
from hcpnet.nn.checkpoint import NetworkCheckpoint
from hcpnet.nn.layers import LayerSpec, Parameter
from hcpnet.nn.network import Network
from hcpnet.nn.optim import ScheduleSpec, sgd_step

from gradcheck import numeric_grad, rel_error

TOL = 1e-4


# -- conv


def test_conv_identity_kernel():
    out, _ = F.conv2d_forward(np.array([[[5.0]]]), np.ones((1, 1, 1, 1)), np.zeros(1))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 5.0


def test_conv_sum_kernel():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out, _ = F.conv2d_forward(x, np.ones((1, 1, 2, 2)), np.zeros(1))
    assert out[0, 0, 0] == 10.0


def _direct_conv(x, w, b, stride, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    f, c, kh, kw = w.shape
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((f, oh, ow))
    for k in range(f):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[k, i, j] = (patch * w[k]).sum() + b[k]
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv_matches_direct_loops(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 7, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, _ = F.conv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(out, _direct_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_weight_grad_of_output_sum():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5, 5))
    w = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)

    def f():
        return F.conv2d_forward(x, w, b, 1, 0)[0].sum()

    out, cache = F.conv2d_forward(x, w, b, 1, 0)
    _, dw, _ = F.conv2d_backward(np.ones_like(out), cache)
    assert rel_error(dw, numeric_grad(f, w)) < 1e-6


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1)])
def test_conv_gradients(stride, pad):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out, _ = F.conv2d_forward(x, w, b, stride, pad)
    g = rng.normal(size=out.shape)

    def f():
        return (F.conv2d_forward(x, w, b, stride, pad)[0] * g).sum()

    _, cache = F.conv2d_forward(x, w, b, stride, pad)
    dx, dw, db = F.conv2d_backward(g, cache)
    assert rel_error(dx, numeric_grad(f, x)) < TOL
    assert rel_error(dw, numeric_grad(f, w)) < TOL
    assert rel_error(db, numeric_grad(f, b)) < TOL


# -- relu


def test_relu_values():
    out, mask = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 2])


def test_relu_all_negative():
    x = -np.arange(1.0, 6.0)
    out, mask = F.relu_forward(x)
    assert not out.any()
    assert not F.relu_backward(np.ones_like(x), mask).any()


def test_relu_gradient():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6))
    x[np.abs(x) < 1e-3] = 0.5
    g = rng.normal(size=x.shape)
    _, mask = F.relu_forward(x)
    dx = F.relu_backward(g, mask)
    assert rel_error(dx, numeric_grad(lambda: (F.relu_forward(x)[0] * g).sum(), x)) < 1e-6


# -- maxpool


def test_maxpool_small():
    out, _ = F.maxpool2d_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    assert out.reshape(-1).tolist() == [4.0]


def test_maxpool_constant_routes_to_first_element():
    x = np.full((1, 4, 4), 3.0)
    out, cache = F.maxpool2d_forward(x, 2, 2)
    assert np.all(out == 3.0)
    dx = F.maxpool2d_backward(np.ones_like(out), cache)
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 1
    np.testing.assert_array_equal(dx[0], expect)


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_brute_force(seed):
    x = np.random.default_rng(seed).normal(size=(1, 4, 4))
    out, _ = F.maxpool2d_forward(x, 2, 2)
    for i in range(2):
        for j in range(2):
            assert out[0, i, j] == x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()


@pytest.mark.parametrize("k,stride", [(2, 2), (3, 2), (2, 1)])
def test_maxpool_gradient_and_mass(k, stride):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 7, 7))
    out, cache = F.maxpool2d_forward(x, k, stride)
    g = rng.normal(size=out.shape)
    dx = F.maxpool2d_backward(g, cache)
    assert abs(dx.sum() - g.sum()) < 1e-10
    assert rel_error(dx, numeric_grad(lambda: (F.maxpool2d_forward(x, k, stride)[0] * g).sum(), x)) < TOL


# -- fully connected


def test_fc_identity():
    x = np.array([1.0, -2.0, 3.0])
    out, _ = F.fc_forward(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out, x)


def test_fc_value():
    out, _ = F.fc_forward(np.array([3.0, 4.0]), np.array([[1.0, 2.0]]), np.array([1.0]))
    assert out.tolist() == [12.0]


def test_fc_gradient():
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=8), rng.normal(size=(4, 8)), rng.normal(size=4)
    g = rng.normal(size=4)

    def f():
        return F.fc_forward(x, w, b)[0] @ g

    _, cache = F.fc_forward(x, w, b)
    dx, dw, db = F.fc_backward(g, cache)
    for got, arr in ((dx, x), (dw, w), (db, b)):
        assert rel_error(got, numeric_grad(f, arr)) < 1e-6


# -- dropout


def test_dropout_ratio_zero_identity():
    x = np.arange(5.0)
    rng = np.random.default_rng(0)
    for train in (True, False):
        np.testing.assert_array_equal(F.dropout_forward(x, 0.0, train, rng)[0], x)


def test_dropout_eval_identity():
    x = np.arange(5.0)
    np.testing.assert_array_equal(F.dropout_forward(x, 0.5, False)[0], x)


def test_dropout_train_mean():
    out, _ = F.dropout_forward(np.ones(100000), 0.5, True, np.random.default_rng(0))
    assert 0.97 <= out.mean() <= 1.03


def test_dropout_needs_rng_and_valid_ratio():
    with pytest.raises(ValueError):
        F.dropout_forward(np.ones(3), 0.5, True)
    with pytest.raises(ValueError):
        F.dropout_forward(np.ones(3), 1.0, False)


def test_dropout_gradient_uses_mask():
    rng = np.random.default_rng(5)
    x = rng.normal(size=20)
    out, mask = F.dropout_forward(x, 0.3, True, rng)
    g = rng.normal(size=20)
    np.testing.assert_array_equal(F.dropout_backward(g, mask), g * mask)


# -- softmax and losses


def test_softmax_examples():
    np.testing.assert_allclose(F.softmax_forward(np.zeros(2))[0], [0.5, 0.5])
    np.testing.assert_allclose(F.softmax_forward(np.log([1.0, 3.0]))[0], [0.25, 0.75], rtol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12), st.floats(-50, 50))
def test_softmax_sum_and_shift(values, shift):
    x = np.array(values)
    p = F.softmax_forward(x)[0]
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(F.softmax_forward(x + shift)[0], p, atol=1e-12)


def test_softmax_gradient():
    rng = np.random.default_rng(6)
    x, g = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    p = F.softmax_forward(x)[0]
    dx = F.softmax_backward(g, p)
    assert rel_error(dx, numeric_grad(lambda: (F.softmax_forward(x)[0] * g).sum(), x)) < TOL


def test_logistic_loss_examples():
    assert F.multinomial_logistic_loss(np.array([0.0, 1.0, 0.0]), 1)[0] == 0.0
    for label in range(4):
        assert abs(F.multinomial_logistic_loss(np.full(4, 0.25), label)[0] - np.log(4)) < 1e-15


def test_logistic_loss_fused_gradient():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(4, 6))
    labels = np.array([0, 5, 2, 2])

    def f():
        return F.multinomial_logistic_loss(F.softmax_forward(z)[0], labels)[0]

    _, g = F.multinomial_logistic_loss(F.softmax_forward(z)[0], labels)
    assert rel_error(g, numeric_grad(f, z)) < 1e-6


def test_logistic_loss_rejects_bad_label():
    with pytest.raises(DataError):
        F.multinomial_logistic_loss(np.full(3, 1 / 3), 3)


def test_squared_loss_examples():
    np.testing.assert_array_equal(F.target_distribution([1, 0, 1, 0]), [0.5, 0, 0.5, 0])
    assert F.squared_loss(np.array([0.5, 0, 0.5, 0]), np.array([1, 0, 1, 0]))[0] == 0
    assert F.squared_loss(np.array([1.0, 0.0]), np.array([0, 1]))[0] == 2.0


def test_squared_loss_rejects_empty_label():
    with pytest.raises(DataError):
        F.squared_loss(np.array([0.5, 0.5]), np.array([0, 0]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_squared_loss_nonnegative_zero_only_at_target(seed, c):
    rng = np.random.default_rng(seed)
    y = (rng.random(c) < 0.5).astype(float)
    y[rng.integers(c)] = 1
    p = F.softmax_forward(rng.normal(size=c))[0]
    target = y / y.sum()
    loss = F.squared_loss(p, y)[0]
    assert loss >= 0
    assert (loss == 0) == bool(np.all(p == target))
    assert F.squared_loss(target, y)[0] == 0


def test_squared_loss_gradient_through_softmax():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(3, 5))
    y = np.array([[1, 0, 1, 0, 0], [0, 0, 0, 0, 1], [1, 1, 1, 0, 1]])

    def f():
        return F.squared_loss(F.softmax_forward(z)[0], y)[0]

    p = F.softmax_forward(z)[0]
    gz = F.softmax_backward(F.squared_loss(p, y)[1], p)
    assert rel_error(gz, numeric_grad(f, z)) < TOL


# -- network


def _small_specs(c=4):
    return [
        LayerSpec("conv", kernel=3, pad=1, out=3),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel=2, stride=2),
        LayerSpec("conv", kernel=3, stride=2, pad=1, out=4),
        LayerSpec("relu"),
        LayerSpec("fc", out=6, group=1),
        LayerSpec("relu"),
        LayerSpec("dropout", ratio=0.5),
        LayerSpec("fc", out=c, group=2),
        LayerSpec("softmax"),
    ]


def test_network_end_to_end_gradient():
    rng = np.random.default_rng(9)
    net = Network(_small_specs(), (2, 8, 8), rng=rng, dtype=np.float64, init_std=0.5, input_grad=True)
    x = rng.normal(size=(3, 2, 8, 8))
    y = np.array([[1, 0, 0, 1], [0, 1, 0, 0], [1, 1, 1, 1]])
    seed = 123

    def f():
        p = net.forward(x, train=True, rng=np.random.default_rng(seed))
        return F.squared_loss(p, y)[0]

    net.zero_grad()
    p = net.forward(x, train=True, rng=np.random.default_rng(seed))
    dx = net.backward(F.squared_loss(p, y)[1])
    for param in net.params:
        assert rel_error(param.grad, numeric_grad(f, param.value)) < TOL, param.name
    assert rel_error(dx, numeric_grad(f, x)) < TOL


def test_eval_forward_is_deterministic():
    net = Network(_small_specs(), (2, 8, 8), rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 2, 8, 8))
    a, b = net.forward(x), net.forward(x)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_network_rejects_wrong_input_shape():
    net = Network(_small_specs(), (2, 8, 8), rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 3, 8, 8)))


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        LayerSpec("conv", kernel=0, out=2)
    with pytest.raises(ConfigError):
        LayerSpec("maxpool", kernel=2, stride=0)
    with pytest.raises(ConfigError):
        LayerSpec("dropout", ratio=1.0)
    with pytest.raises(ConfigError):
        LayerSpec("pool")


def test_parameter_shapes_must_agree():
    with pytest.raises(ShapeError):
        Parameter(np.zeros(3), grad=np.zeros(4))


# -- optimizer


def test_schedule_examples():
    s = ScheduleSpec(base_lr={0: 0.01})
    assert s.lr_at(0, 0) == 0.01
    assert abs(s.lr_at(0, 25) - 0.001) < 1e-15
    assert abs(s.lr_at(0, 45) - 0.0001) < 1e-15
    with pytest.raises(ConfigError):
        s.lr_at(3, 0)


def test_sgd_zero_state_keeps_value():
    p = Parameter(np.array([1.5, -2.0]))
    sgd_step([p], ScheduleSpec(base_lr={0: 0.1}, weight_decay=0.0), 0)
    np.testing.assert_array_equal(p.value, [1.5, -2.0])


def test_sgd_single_update():
    p = Parameter(np.array([1.0]))
    p.grad[:] = 2.0
    sgd_step([p], ScheduleSpec(base_lr={0: 0.1}, momentum=0.0, weight_decay=0.0), 0)
    assert abs(p.value[0] - 0.8) < 1e-15


def test_sgd_momentum_and_decay():
    p = Parameter(np.array([1.0]))
    s = ScheduleSpec(base_lr={0: 0.1}, momentum=0.9, weight_decay=0.5)
    p.grad[:] = 1.0
    sgd_step([p], s, 0)
    # m = -0.1 * (1 + 0.5) = -0.15
    assert abs(p.value[0] - 0.85) < 1e-15
    sgd_step([p], s, 0)
    # m = 0.9 * -0.15 - 0.1 * (1 + 0.425) = -0.2775
    assert abs(p.value[0] - (0.85 - 0.2775)) < 1e-12


# -- checkpoint


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    net = Network(_small_specs(), (2, 8, 8), rng=rng)
    for p in net.params:
        p.momentum_buf[...] = rng.normal(size=p.value.shape)
    ck = NetworkCheckpoint.from_network(net, "ift", 7, np.array([1.5, 2.5]), {"categories": ["a", "b"]})
    path = tmp_path / "net.ckpt"
    ckio.save(ck, path)
    back = ckio.load(path)
    assert back.stage == "ift" and back.epoch == 7
    assert back.specs == ck.specs and back.input_shape == ck.input_shape
    assert back.extra == {"categories": ["a", "b"]}
    np.testing.assert_array_equal(back.mean, ck.mean)
    for a, b in zip(back.values + back.momenta, ck.values + ck.momenta):
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    assert ckio.dumps(back) == path.read_bytes()


def test_checkpoint_restores_network():
    net = Network(_small_specs(), (2, 8, 8), rng=np.random.default_rng(11))
    ck = ckio.loads(ckio.dumps(NetworkCheckpoint.from_network(net, "pretrain")))
    x = np.random.default_rng(0).normal(size=(2, 2, 8, 8))
    assert np.array_equal(ck.to_network().forward(x), net.forward(x))


def test_checkpoint_format_errors():
    with pytest.raises(CheckpointFormatError):
        ckio.loads(b"NOPE" + bytes(20))
    net = Network(_small_specs(), (2, 8, 8), rng=np.random.default_rng(0))
    blob = ckio.dumps(NetworkCheckpoint.from_network(net, "hft"))
    with pytest.raises(CheckpointFormatError):
        ckio.loads(blob[: len(blob) // 2])


def test_checkpoint_stage_guard():
    net = Network(_small_specs(), (2, 8, 8), rng=np.random.default_rng(0))
    ck = NetworkCheckpoint.from_network(net, "pretrain")
    ck.require_stage("pretrain")
    with pytest.raises(StageMismatchError):
        ck.require_stage("ift")
