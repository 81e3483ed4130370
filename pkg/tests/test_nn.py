import numpy as np
import pytest

from thermoforge.domain import DEFAULT_RANGES, synthetic_weather
from thermoforge.errors import DomainError, TrainingError
from thermoforge.nn import (
    GATES,
    AdamState,
    MetamodelWeights,
    ModelLayout,
    TrainConfig,
    TrainingData,
    adam_step,
    analytic_gradient,
    backward,
    clip_gradients,
    ffn_forward,
    forward,
    init_weights,
    loss,
    loss_and_grad,
    lstm_cell,
    numerical_gradient,
    train,
)
from thermoforge.sampler import build_dataset

from oracles import scalar_lstm_cell, scalar_lstm_sequence


def _weights(kind="lstm", width=5, d=4, layers=2, n_out=3, seed=0):
    layout = ModelLayout(kind, width, d, layers, tuple(f"c{i}" for i in range(n_out)))
    return init_weights(layout, np.random.default_rng(seed))


def _zeros(kind="lstm", width=5, d=4, layers=2, n_out=3):
    layout = ModelLayout(kind, width, d, layers, tuple(f"c{i}" for i in range(n_out)))
    return MetamodelWeights(layout, {k: np.zeros(s) for k, s in layout.shapes().items()})


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


# ---------------------------------------------------------------------------
# cell


def test_zero_parameter_cell():
    layer = _zeros().layer(0)
    c_prev = np.array([[0.3, -1.2, 2.0, 0.0]])
    h, c = lstm_cell(np.ones((1, 5)), np.zeros((1, 4)), c_prev, layer)
    np.testing.assert_allclose(c, 0.5 * c_prev, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-15)
    h0, c0 = lstm_cell(np.ones((1, 5)), np.zeros((1, 4)), np.zeros((1, 4)), layer)
    assert np.all(h0 == 0) and np.all(c0 == 0)


def test_hidden_state_bounded():
    w = _weights(d=6, seed=3)
    rng = np.random.default_rng(0)
    layer = w.layer(0)
    h, c = np.zeros((8, 6)), np.zeros((8, 6))
    for _ in range(50):
        h, c = lstm_cell(rng.normal(scale=20, size=(8, 5)), h, c, layer)
        assert np.all(np.abs(h) <= 1.0)


def _scalar_oracle_args(w):
    layers = []
    for i in range(w.layout.n_layers):
        lay = w.layer(i)
        W = {g: lay.input_matrix(g).tolist() for g in GATES}
        U = {g: lay.hidden_matrix(g).tolist() for g in GATES}
        b = {g: lay.bias(g).tolist() for g in GATES}
        layers.append((W, U, b))
    return layers, w["head.w"].tolist(), w["head.b"].tolist()


def test_forward_matches_scalar_oracle():
    w = _weights(width=5, d=3, layers=2, n_out=2, seed=11)
    x = np.random.default_rng(1).uniform(size=(7, 5))
    expected = scalar_lstm_sequence(x, *_scalar_oracle_args(w))
    np.testing.assert_allclose(forward(w, x), expected, rtol=1e-13, atol=1e-14)


def test_cell_matches_scalar_oracle():
    w = _weights(width=4, d=3, layers=1, seed=2)
    rng = np.random.default_rng(5)
    x, h, c = rng.normal(size=4), rng.normal(size=3) * 0.5, rng.normal(size=3)
    layers, _, _ = _scalar_oracle_args(w)
    h_ref, c_ref = scalar_lstm_cell(x.tolist(), h.tolist(), c.tolist(), *layers[0])
    h_new, c_new = lstm_cell(x, h, c, w.layer(0))
    np.testing.assert_allclose(h_new[0], h_ref, rtol=1e-13)
    np.testing.assert_allclose(c_new[0], c_ref, rtol=1e-13)


# ---------------------------------------------------------------------------
# forward contract


def test_zero_head_outputs_half():
    w = _weights()
    p = dict(w.params)
    p["head.w"] = np.zeros_like(p["head.w"])
    p["head.b"] = np.zeros_like(p["head.b"])
    out = forward(w.replace(p), np.random.default_rng(0).uniform(size=(9, 5)))
    assert np.all(out == 0.5)


@pytest.mark.parametrize("horizon", [1, 5, 24])
def test_output_shape(horizon):
    w = _weights()
    x = np.random.default_rng(0).uniform(size=(horizon, 5))
    assert forward(w, x).shape == (horizon, 3)
    assert forward(w, x[None].repeat(2, 0)).shape == (2, horizon, 3)


def test_eval_mode_bit_identical():
    w = _weights()
    x = np.random.default_rng(0).uniform(size=(12, 5))
    assert forward(w, x).tobytes() == forward(w, x).tobytes()
    # dropout is ignored outside training
    assert forward(w, x, dropout=0.5).tobytes() == forward(w, x).tobytes()


def test_outputs_strictly_inside_unit_interval():
    w = _weights(seed=4)
    out = forward(w, np.random.default_rng(0).normal(scale=5, size=(3, 20, 5)))
    assert np.all((out > 0) & (out < 1))


def test_causality():
    w = _weights(seed=6)
    x = np.random.default_rng(2).uniform(size=(16, 5))
    full = forward(w, x)
    for k in (0, 5, 15):
        np.testing.assert_array_equal(forward(w, x[: k + 1]), full[: k + 1])


def test_batch_matches_single_episode():
    w = _weights(seed=6)
    x = np.random.default_rng(2).uniform(size=(3, 10, 5))
    batch = forward(w, x)
    for i in range(3):
        np.testing.assert_allclose(batch[i], forward(w, x[i]), rtol=1e-14, atol=1e-15)


def test_serialization_round_trip(tmp_path, normalizer):
    layout = ModelLayout("lstm", 37, 4, 2)
    w = init_weights(layout, np.random.default_rng(0), normalizer=normalizer)
    w.save(tmp_path / "w.json")
    back = MetamodelWeights.load(tmp_path / "w.json")
    x = np.random.default_rng(1).uniform(size=(10, 37))
    assert forward(back, x).tobytes() == forward(w, x).tobytes()
    assert back.normalizer.bounds == normalizer.bounds
    assert back.layout == layout


def test_weights_are_read_only():
    w = _weights()
    with pytest.raises(ValueError):
        w["head.b"][0] = 1.0


def test_width_mismatch_rejected():
    with pytest.raises(DomainError):
        forward(_weights(), np.zeros((4, 6)))
    with pytest.raises(DomainError):
        MetamodelWeights(ModelLayout("lstm", 5, 4, 1), {"head.w": np.zeros((4, 8))})


def test_forget_bias_initialisation():
    w = _weights(d=4, seed=0)
    assert np.all(w.layer(1).bias("f") == 1.0)


# ---------------------------------------------------------------------------
# loss


def test_loss_hand_value():
    target = np.zeros((10, 3))
    pred = np.zeros((10, 3))
    pred[:, 0] = np.sqrt(2e-5)
    pred[:, 1:] = np.sqrt(4e-4)
    assert abs(loss(pred, target, 0.5) - 2.1e-4) <= 1e-16


def test_loss_boundaries():
    rng = np.random.default_rng(0)
    pred, target = rng.uniform(size=(2, 6, 4)), rng.uniform(size=(2, 6, 4))
    assert loss(target, target) == 0.0
    assert loss(pred, target, 1.0) == pytest.approx(np.mean((pred[..., 0] - target[..., 0]) ** 2), rel=1e-14)
    with pytest.raises(DomainError):
        loss(pred, target, 1.5)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    pred, target = rng.uniform(size=(2, 5, 3)), rng.uniform(size=(2, 5, 3))
    _, g = loss_and_grad(pred, target, 0.3)
    num = np.zeros_like(pred)
    for i in np.ndindex(pred.shape):
        p, m = pred.copy(), pred.copy()
        p[i] += 1e-6
        m[i] -= 1e-6
        num[i] = (loss(p, target, 0.3) - loss(m, target, 0.3)) / 2e-6
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-10)


# ---------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("kind", ["lstm", "ffn"])
def test_gradient_check_small_net(kind):
    w = _weights(kind=kind, width=5, d=4, layers=2, n_out=3, seed=21)
    rng = np.random.default_rng(3)
    x, y = rng.uniform(size=(2, 8, 5)), rng.uniform(size=(2, 8, 3))
    analytic = analytic_gradient(w, x, y)
    numeric = numerical_gradient(w, x, y, step=1e-4)
    for name in w.params:
        assert _rel_err(analytic[name], numeric[name]) < 1e-5, name


def test_head_bias_gradient_closed_form():
    w = _weights(seed=8)
    rng = np.random.default_rng(4)
    x, y = rng.uniform(size=(10, 5)), rng.uniform(size=(10, 3))
    pred, cache = forward(w, x, return_cache=True)
    _, dpred = loss_and_grad(pred, y)
    grads = backward(w, cache, dpred)
    signal = dpred * pred * (1 - pred)
    np.testing.assert_allclose(grads["head.b"], signal.sum(axis=0), rtol=1e-13)


def test_zero_loss_zero_gradient():
    w = _weights(seed=8)
    x = np.random.default_rng(4).uniform(size=(6, 5))
    y = forward(w, x)
    grads = analytic_gradient(w, x, y)
    assert all(np.all(g == 0) for g in grads.values())


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_never_moves():
    w = _weights()
    state = AdamState.zeros(w)
    zero = {k: np.zeros_like(v) for k, v in w.params.items()}
    cur = w
    for _ in range(20):
        cur, state = adam_step(cur, zero, state, TrainConfig())
    for k in w.params:
        np.testing.assert_array_equal(cur[k], w[k])


def test_adam_first_step_hand_value():
    w = _weights()
    ones = {k: np.ones_like(v) for k, v in w.params.items()}
    new, state = adam_step(w, ones, AdamState.zeros(w), TrainConfig(lr=0.001))
    for k in w.params:
        np.testing.assert_allclose(new[k] - w[k], -0.001, rtol=1e-7)
    assert state.step == 1


def test_adam_update_invariant_to_batch_order():
    w = _weights(seed=2)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=(6, 7, 5)), rng.uniform(size=(6, 7, 3))
    perm = rng.permutation(6)
    g1 = analytic_gradient(w, x, y)
    g2 = analytic_gradient(w, x[perm], y[perm])
    a, _ = adam_step(w, g1, AdamState.zeros(w), TrainConfig())
    b, _ = adam_step(w, g2, AdamState.zeros(w), TrainConfig())
    for k in w.params:
        np.testing.assert_allclose(a[k], b[k], rtol=0, atol=1e-15)


def test_clip_gradients():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    c = clip_gradients(g, 1.0)
    assert np.hypot(c["a"][0], c["b"][0]) == pytest.approx(1.0)
    assert clip_gradients(g, None) is g
    assert clip_gradients(g, 10.0) is g


# ---------------------------------------------------------------------------
# training


@pytest.fixture(scope="module")
def small_data(geometry, oracle_cfg, normalizer):
    w = synthetic_weather(14, seed=0)
    ds = build_dataset(50, w, DEFAULT_RANGES, 0.2, np.random.default_rng(0), geometry=geometry,
                       oracle=oracle_cfg, horizon=168)
    return TrainingData.from_dataset(ds, normalizer)


def test_training_loss_decreases_on_average(small_data):
    cfg = TrainConfig(lr=5e-3, batch_size=8, epochs=30, seed=1)
    res = train(small_data, cfg, d_emb=8, n_layers=1)
    losses = np.array([h["train_loss"] for h in res.history])
    windows = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(windows) <= 0)
    assert res.history[res.best_epoch]["val_loss"] == min(h["val_loss"] for h in res.history)


def test_training_deterministic(small_data):
    cfg = TrainConfig(lr=5e-3, batch_size=16, epochs=3, seed=4)
    a = train(small_data, cfg, d_emb=4, n_layers=2)
    b = train(small_data, cfg, d_emb=4, n_layers=2)
    strip = lambda h: [(e["epoch"], e["train_loss"], e["val_loss"]) for e in h]  # noqa: E731
    assert strip(a.history) == strip(b.history)
    for k in a.weights.params:
        assert a.weights[k].tobytes() == b.weights[k].tobytes()


def test_empty_training_split_rejected(small_data):
    with pytest.raises(TrainingError):
        train(TrainingData(small_data.x_train[:0], small_data.y_train[:0], small_data.x_val, small_data.y_val))


# ---------------------------------------------------------------------------
# FFN baseline


def test_ffn_stateless_row_permutation():
    w = _weights(kind="ffn", seed=5)
    x = np.random.default_rng(0).uniform(size=(12, 5))
    perm = np.random.default_rng(1).permutation(12)
    np.testing.assert_array_equal(ffn_forward(w, x[perm]), ffn_forward(w, x)[perm])


def test_zero_weight_ffn_outputs_half():
    w = _zeros(kind="ffn")
    assert np.all(ffn_forward(w, np.random.default_rng(0).uniform(size=(6, 5))) == 0.5)
    with pytest.raises(DomainError):
        ffn_forward(_weights(), np.zeros((3, 5)))
