import numpy as np
import pytest

from planoforge import numerics as nx


def _params(rng, **shapes):
    return {k: nx.tensor(rng.normal(size=s), requires_grad=True, name=k) for k, s in shapes.items()}


def test_add_and_mul_values():
    a, b = nx.tensor([1.0, 2.0]), nx.tensor([3.0, 4.0])
    np.testing.assert_array_equal((a + b).data, [4.0, 6.0])
    np.testing.assert_array_equal((a * b).data, [3.0, 8.0])
    np.testing.assert_array_equal((2.0 * a).data, [2.0, 4.0])


def test_ndarray_on_left_dispatches_to_tensor():
    a = nx.tensor(np.ones((2, 2)), requires_grad=True)
    out = np.full((2, 2), 3.0) * a
    assert isinstance(out, nx.Tensor)
    g = nx.backward(nx.reduce_sum(out), {"a": a})
    np.testing.assert_array_equal(g["a"], np.full((2, 2), 3.0))


def test_no_implicit_broadcasting():
    with pytest.raises(nx.ShapeError):
        nx.add(nx.tensor(np.ones((2, 3))), nx.tensor(np.ones(3)))


def test_tensor_data_is_read_only():
    t = nx.tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_backward_needs_scalar():
    a = nx.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nx.ShapeError):
        nx.backward(a * 2.0, {"a": a})


def test_unreferenced_parameter_gets_zero_gradient():
    a = nx.tensor(np.ones(3), requires_grad=True)
    b = nx.tensor(np.ones((2, 2)), requires_grad=True)
    g = nx.backward(nx.reduce_sum(a), {"a": a, "b": b})
    np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))


def test_no_grad_records_nothing():
    a = nx.tensor(np.ones(3), requires_grad=True)
    with nx.no_grad():
        out = nx.exp(a)
    assert not out.requires_grad


def test_forward_op_dispatch():
    out = nx.forward_op("relu", nx.tensor([-1.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_interp_matches_numpy_and_slope():
    knots = np.array([-1.0, 0.0, 1.0])
    vals = np.array([0.0, 2.0, 3.0])
    x = nx.tensor([-0.5, 0.5, 2.0], requires_grad=True)
    out = nx.interp(x, knots, vals)
    np.testing.assert_allclose(out.data, np.interp(x.data, knots, vals))
    g = nx.backward(nx.reduce_sum(out), {"x": x})
    np.testing.assert_allclose(g["x"], [2.0, 1.0, 0.0])


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out = nx.conv2d(x, w).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                ref[0, o, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_strided_conv_is_subsampled_same_conv(rng):
    x = rng.normal(size=(2, 3, 5, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    full = nx.conv2d(x, w).data
    np.testing.assert_allclose(nx.conv2d(x, w, stride=2).data, full[:, :, ::2, ::2], atol=1e-12)


@pytest.mark.parametrize("op", ["conv", "conv_s2", "attention", "reductions", "elementwise", "upsample"])
def test_grad_check(op, rng):
    if op in ("conv", "conv_s2"):
        P = _params(rng, x=(2, 3, 5, 6), w=(4, 3, 3, 3), b=(4,))
        stride = 2 if op == "conv_s2" else 1
        f = lambda p: nx.reduce_sum(nx.square(nx.add_bias(nx.conv2d(p["x"], p["w"], stride=stride), p["b"])))
    elif op == "attention":
        P = _params(rng, q=(2, 4, 3), k=(2, 4, 3), v=(2, 4, 3))
        f = lambda p: nx.reduce_sum(nx.square(nx.matmul(
            nx.softmax(nx.matmul(p["q"], nx.transpose(p["k"], (0, 2, 1))), axis=-1), p["v"])))
    elif op == "reductions":
        P = _params(rng, a=(3, 4))
        f = lambda p: nx.reduce_sum(nx.reduce_max(p["a"], axis=1)) + nx.reduce_sum(nx.reduce_min(p["a"], axis=0))
    elif op == "elementwise":
        P = _params(rng, a=(3, 4), b=(3, 4))
        f = lambda p: nx.reduce_mean(nx.silu(p["a"]) * nx.tanh(p["b"]) + nx.sigmoid(p["a"] - p["b"])
                                     + nx.exp(p["a"] * 0.1) / (nx.square(p["b"]) + 1.0))
    else:
        P = _params(rng, a=(1, 2, 3, 3))
        f = lambda p: nx.reduce_sum(nx.square(nx.upsample_nearest(p["a"], 2)[:, :, :5, :4]))
    assert nx.grad_check(f, P, step=1e-6) < 1e-6


def test_grad_check_rejects_bad_step(rng):
    P = _params(rng, a=(2,))
    with pytest.raises(ValueError):
        nx.grad_check(lambda p: nx.reduce_sum(p["a"]), P, step=1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_mode_flags_non_finite():
    with nx.debug_mode():
        with pytest.raises(nx.NonFiniteError):
            nx.log(nx.tensor([0.0]))
