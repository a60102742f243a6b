import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from netselect.errors import EmptyList, InvalidConfig, InvalidLabel, NonFiniteGradient, ShapeMismatch
from netselect.neural_core import (
    ArchConfig,
    ModelParams,
    OptimizerState,
    average_gradients,
    conv1d_forward,
    forward,
    gradient_check,
    init_params,
    loss_and_grad,
    loss_grad,
    loss_value,
    lstm_forward,
    optimizer_step,
    predict,
    sigmoid,
    zero_params,
)

TINY = ArchConfig(3, (4, 4, 4, 4), 3, 6, 2, (5, 4))


def _with_random_biases(p, seed=0):
    # nonzero biases keep ReLU units away from their kink at exactly zero
    rng = np.random.default_rng(seed)
    q = p.copy()
    for n in q.tensors:
        if n.endswith("bias") or n.endswith(".b"):
            q.tensors[n] = q.tensors[n] + rng.uniform(-0.3, 0.3, q[n].shape)
    return q


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(np.array([-800.0, 800.0])).tolist() == [0.0, 1.0]


def test_param_shapes_default_arch():
    shapes = ArchConfig(9).param_shapes()
    assert shapes["conv0.weight"] == (64, 9, 3)
    assert shapes["conv3.weight"] == (128, 64, 3)
    assert shapes["lstm0.W"] == (128, 512)
    assert shapes["lstm1.U"] == (128, 512)
    assert shapes["fc0.weight"] == (64, 128)
    assert shapes["fc2.weight"] == (1, 32)


def test_output_length():
    assert ArchConfig(3).output_length(64) == 56
    assert ArchConfig(3, padding="same").output_length(8) == 8
    with pytest.raises(InvalidConfig):
        ArchConfig(3, padding="causal")


def test_init_is_seeded():
    a, b, c = init_params(TINY, 4), init_params(TINY, 4), init_params(TINY, 5)
    assert a.bit_equal(b)
    assert not a.bit_equal(c)
    assert a["lstm0.b"][6:12].tolist() == [1.0] * 6  # forget gate


def test_zero_model_outputs_half():
    X = np.random.default_rng(0).random((4, 10, 3))
    assert predict(zero_params(TINY), X).tolist() == [0.5] * 4


def test_forward_shape_errors():
    p = init_params(TINY, 0)
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((2, 10, 4)))
    with pytest.raises(ShapeMismatch):
        ModelParams(TINY, {**p.tensors, "fc0.bias": np.zeros(7)})


def test_arch_json_round_trip():
    arch = ArchConfig(9, (8, 8), 3, 16, 1, (4,), "same", "identity")
    assert ArchConfig.from_json(arch.to_json()) == arch


def _naive_conv(x, w, b, padding):
    c_out, c_in, k = w.shape
    if padding == "same":
        x = np.pad(x, ((0, 0), ((k - 1) // 2, k // 2)))
    L = x.shape[1] - k + 1
    out = np.zeros((c_out, L))
    for o in range(c_out):
        for t in range(L):
            out[o, t] = b[o] + sum(w[o, c, j] * x[c, t + j] for c in range(c_in) for j in range(k))
    return np.maximum(out, 0.0)


@pytest.mark.parametrize("padding", ["valid", "same"])
def test_conv_matches_loops(padding):
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 9)), rng.normal(size=(5, 3, 3)), rng.normal(size=5)
    out, _ = conv1d_forward(x, w, b, padding)
    assert np.allclose(out, _naive_conv(x, w, b, padding), atol=1e-12)


def test_lstm_matches_step_equations():
    rng = np.random.default_rng(2)
    D, H, L = 3, 4, 6
    x = rng.normal(size=(1, L, D))
    W, U, b = rng.normal(size=(D, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H)
    hs, (h_last, c_last), _ = lstm_forward(x, W, U, b)
    h, c = np.zeros(H), np.zeros(H)
    s = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    for t in range(L):
        z = x[0, t] @ W + h @ U + b
        i, f, g, o = s(z[:H]), s(z[H : 2 * H]), np.tanh(z[2 * H : 3 * H]), s(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        assert np.allclose(hs[0, t], h, atol=1e-12)
    assert np.allclose(c_last[0], c, atol=1e-12)


@pytest.mark.parametrize("padding,T", [("valid", 10), ("same", 8)])
@pytest.mark.parametrize("act,kind", [("sigmoid", "bce"), ("identity", "mse"), ("identity", "mae")])
def test_gradients_match_finite_differences(padding, T, act, kind):
    arch = ArchConfig(3, (4, 4, 4, 4), 3, 6, 2, (5, 4), padding, act)
    p = _with_random_biases(init_params(arch, 1))
    rng = np.random.default_rng(0)
    X = rng.random((4, T, 3))
    y = (rng.random(4) > 0.5).astype(float) if kind == "bce" else rng.random(4)
    report = gradient_check(p, X, y, kind, coords_per_layer=25)
    for layer, (n, err) in report.items():
        assert err < 1e-4, (layer, err)


def test_loss_values():
    assert loss_value([0.5], [1], "bce") == pytest.approx(math.log(2))
    assert loss_value([1.0, 3.0], [0.0, 0.0], "mse") == 5.0
    assert loss_value([1.0, -3.0], [0.0, 0.0], "mae") == 2.0
    assert math.isfinite(loss_value([0.0], [1], "bce"))
    with pytest.raises(InvalidLabel):
        loss_value([0.5], [0.3], "bce")
    with pytest.raises(ShapeMismatch):
        loss_value([0.5, 0.2], [1], "mse")


def test_fused_bce_gradient_matches_chain_rule():
    p = _with_random_biases(init_params(TINY, 3))
    X = np.random.default_rng(4).random((6, 10, 3))
    y = np.array([0, 1, 1, 0, 1, 0.0])
    pred, _ = forward(p, X)
    dpred = loss_grad(pred, y, "bce")
    # dL/dz = dL/dp * p(1-p) must equal (p - y)/n away from the clamp
    assert np.allclose(dpred * pred * (1 - pred), (pred - y) / len(y), rtol=1e-9)


def test_non_finite_gradient_raises():
    p = init_params(TINY, 0)
    X = np.full((2, 10, 3), np.nan)
    with pytest.raises(NonFiniteGradient):
        loss_and_grad(p, X, np.array([0.0, 1.0]), "bce")


def test_sgd_step():
    params = {"w": np.array([1.0, 2.0])}
    new, st_ = optimizer_step(params, {"w": np.array([0.5, -1.0])}, OptimizerState(0.1, "sgd"))
    assert new["w"].tolist() == [0.95, 2.1]
    assert st_.step == 1
    assert params["w"].tolist() == [1.0, 2.0]


def test_adam_first_step_oracle():
    # after one step m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps)
    g = np.array([0.5, -2.0, 1e-3])
    new, s = optimizer_step({"w": np.zeros(3)}, {"w": g}, OptimizerState())
    assert np.allclose(new["w"], -0.001 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    new2, s2 = optimizer_step(new, {"w": g}, s)
    assert s2.step == 2 and np.allclose(new2["w"], 2 * new["w"], rtol=1e-9)


def test_optimizer_shape_errors():
    with pytest.raises(ShapeMismatch):
        optimizer_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState())
    with pytest.raises(ShapeMismatch):
        optimizer_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, OptimizerState())
    with pytest.raises(InvalidConfig):
        OptimizerState(kind="rmsprop")


grad_arrays = hnp.arrays(np.float64, (3, 2), elements=st.floats(-1e6, 1e6))


@given(st.lists(grad_arrays, min_size=1, max_size=6), st.randoms())
def test_average_is_order_free(gs, rnd):
    sets = [{"w": g} for g in gs]
    shuffled = sets[:]
    rnd.shuffle(shuffled)
    a, b = average_gradients(sets)["w"], average_gradients(shuffled)["w"]
    assert a.tobytes() == b.tobytes()
    assert np.allclose(a, np.mean(gs, axis=0), rtol=1e-9, atol=1e-6)


@given(grad_arrays, st.integers(1, 8))
def test_average_of_copies_is_exact(g, n):
    out = average_gradients([{"w": g.copy()} for _ in range(n)])["w"]
    assert out.tobytes() == g.tobytes()


def test_average_errors():
    with pytest.raises(EmptyList):
        average_gradients([])
    with pytest.raises(ShapeMismatch):
        average_gradients([{"w": np.zeros(2)}, {"w": np.zeros(3)}])
    with pytest.raises(ShapeMismatch):
        average_gradients([{"w": np.zeros(2)}, {"v": np.zeros(2)}])
