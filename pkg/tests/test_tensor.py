import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import max_rel_error, numeric_grad
from tiltrank.tensor import (
    Tape,
    Var,
    conv2d,
    conv2d_transpose,
    mse_loss,
    relu,
    sgd_step,
    softmax_rows,
    tanh,
    upsample_nearest,
)


def loop_conv(x, w, b, stride, pad):
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                s = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            s += xp[c, i * stride + u, j * stride + v] * w[o, c, u, v]
                out[o, i, j] = s
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv2d_matches_nested_loops(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(x, w, b, stride, pad)
    for n in range(2):
        np.testing.assert_allclose(out[n], loop_conv(x[n], w, b, stride, pad), rtol=0, atol=1e-12)
    np.testing.assert_allclose(conv2d(x[1], w, b, stride, pad), out[1], rtol=0, atol=1e-12)


def test_conv2d_identity_and_bias_only():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 6, 7))
    eye = np.eye(4)[:, :, None, None]
    np.testing.assert_array_equal(conv2d(x, eye, np.zeros(4)), x)
    b = np.array([0.5, -2.0])
    out = conv2d(x, np.zeros((2, 4, 3, 3)), b, pad=1)
    assert np.all(out[0] == 0.5) and np.all(out[1] == -2.0)


@pytest.mark.parametrize(
    "w_shape,kwargs",
    [((3, 2, 3, 3), {}), ((3, 3, 2, 2), {}), ((3, 3, 3, 3), {"stride": 0}), ((3, 3, 3, 3), {"pad": -1})],
)
def test_conv2d_rejects_bad_arguments(w_shape, kwargs):
    with pytest.raises(ValueError):
        conv2d(np.zeros((3, 8, 8)), np.zeros(w_shape), **kwargs)


def test_conv2d_transpose_identity_and_shape():
    x = np.random.default_rng(1).standard_normal((3, 4, 4))
    np.testing.assert_array_equal(conv2d_transpose(x, np.eye(3)[:, :, None, None]), x)
    assert conv2d_transpose(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)), stride=2).shape == (1, 1, 5, 5)


def test_conv2d_transpose_is_adjoint_on_50_shapes():
    rng = np.random.default_rng(42)
    for _ in range(50):
        c_in, c_out = rng.integers(1, 4, size=2)
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, k // 2 + 1))
        h, w = rng.integers(k, 10, size=2)
        x = rng.standard_normal((2, c_in, h, w))
        wt = rng.standard_normal((c_out, c_in, k, k))
        y_shape = conv2d(x, wt, stride=stride, pad=pad).shape
        y = rng.standard_normal(y_shape)
        # output_padding must restore exactly the input size
        ho = (y_shape[2] - 1) * stride + k - 2 * pad
        wo = (y_shape[3] - 1) * stride + k - 2 * pad
        if h - ho != w - wo:
            continue
        xt = conv2d_transpose(y, wt, stride=stride, pad=pad, output_padding=h - ho)
        assert xt.shape == x.shape
        lhs = np.sum(conv2d(x, wt, stride=stride, pad=pad) * y)
        rhs = np.sum(x * xt)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_conv2d_transpose_rejects_bad_output_padding():
    with pytest.raises(ValueError):
        conv2d_transpose(np.zeros((1, 3, 3)), np.zeros((1, 1, 3, 3)), stride=2, output_padding=2)


def test_activations():
    assert tanh(0.0) == 0.0
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    np.testing.assert_allclose(softmax_rows(np.zeros((2, 4))), 0.25, atol=0)


def test_softmax_overflow_safe():
    x = np.array([[1000.0, 1000.1, 999.0]])
    s = softmax_rows(x)
    shifted = np.exp(np.array([-0.1, 0.0, -1.1]))
    np.testing.assert_allclose(s[0], shifted / shifted.sum(), rtol=0, atol=1e-12)
    assert abs(s.sum() - 1) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    s = softmax_rows(x)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all((s > 0) & (s <= 1))


def test_softmax_needs_2d():
    with pytest.raises(ValueError):
        softmax_rows(np.zeros(3))


def test_mse_loss():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 3, 4))
    assert mse_loss(a, a) == 0.0
    assert mse_loss(a + 1.0, a) == pytest.approx(1.0, abs=1e-12)
    total = 0.0
    for i in range(2):
        for j in range(3):
            for k in range(4):
                total += (a[i, j, k] - b[i, j, k]) ** 2
    assert abs(mse_loss(a, b) - total / 24) <= 1e-12
    with pytest.raises(ValueError):
        mse_loss(a, b[:1])


def _small_net(tape, x, p, target):
    h = tape.relu(tape.conv2d(x, p["w1"], p["b1"], stride=2, pad=1))
    h = tape.tanh(tape.conv2d(tape.upsample_nearest(h), p["w2"], p["b2"], pad=1))
    shape = h.value.shape
    rows = tape.record(h.value.reshape(-1, shape[-1]), (h,), lambda g: (g.reshape(shape),))
    return tape.mse_loss(tape.softmax_rows(rows), target)


@pytest.mark.parametrize("seed", range(5))
def test_tape_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    vals = {
        "x": rng.standard_normal((2, 2, 6, 6)),
        "w1": rng.standard_normal((3, 2, 3, 3)) * 0.5,
        "b1": rng.standard_normal(3) * 0.1,
        "w2": rng.standard_normal((2, 3, 3, 3)) * 0.5,
        "b2": rng.standard_normal(2) * 0.1,
    }
    target = rng.uniform(0, 0.3, size=(2 * 2 * 6, 6))

    def loss_value():
        tape = Tape()
        vs = {k: Var(v) for k, v in vals.items()}
        return float(_small_net(tape, vs["x"], vs, target).value)

    tape = Tape()
    vs = {k: Var(v) for k, v in vals.items()}
    tape.backward(_small_net(tape, vs["x"], vs, target))
    for name in vals:
        assert max_rel_error(vs[name].grad, numeric_grad(loss_value, vals[name])) < 1e-4, name


def test_backward_requires_forward():
    with pytest.raises(RuntimeError):
        Tape().backward(Var(np.array(1.0)))
    tape = Tape()
    x = Var(np.ones(3))
    with pytest.raises(ValueError):
        tape.backward(tape.relu(x))


def test_upsample_nearest():
    x = np.arange(4.0).reshape(1, 2, 2)
    np.testing.assert_array_equal(upsample_nearest(x)[0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_sgd_step():
    p = {"a": np.array([1.0, -2.0])}
    g = {"a": np.array([0.5, 0.25])}
    new, _ = sgd_step(p, g, lr=0.1)
    np.testing.assert_array_equal(new["a"], p["a"] - 0.1 * g["a"])
    same, _ = sgd_step(p, {"a": np.zeros(2)}, lr=0.1, momentum=0.9, velocity={"a": np.zeros(2)})
    np.testing.assert_array_equal(same["a"], p["a"])
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])  # inputs untouched


def test_sgd_two_step_momentum_recurrence():
    lr, m = 0.05, 0.9
    p0 = np.array([0.3, -1.2, 2.0])
    g1 = np.array([1.0, 0.5, -0.25])
    g2 = np.array([-0.4, 0.2, 0.8])
    p1, v1 = sgd_step({"p": p0}, {"p": g1}, lr, m)
    p2, _ = sgd_step(p1, {"p": g2}, lr, m, v1)
    expected = p0 - lr * g1 - lr * (m * g1 + g2)
    np.testing.assert_allclose(p2["p"], expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("lr,m", [(0.0, 0.0), (-1.0, 0.0), (0.1, 1.0), (0.1, -0.1)])
def test_sgd_rejects_bad_hyperparameters(lr, m):
    with pytest.raises(ValueError):
        sgd_step({"p": np.zeros(1)}, {"p": np.zeros(1)}, lr, m)


def test_conv_is_deterministic():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    assert conv2d(x, w, pad=1).tobytes() == conv2d(x.copy(), w.copy(), pad=1).tobytes()
