import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralut import config
from neuralut.data import Dataset
from neuralut.topology import build_model, checkpoint_bytes
from neuralut.training import (
    AdamWState,
    TrainConfig,
    TrainConfigError,
    adamw_step,
    lr_at,
    train,
)


def test_lr_examples():
    assert lr_at(0, 10, 2, 1e-4, 1e-2) == 1e-2
    assert lr_at(10, 10, 1, 1e-4, 1e-2) == 1e-2  # restart, T_cur back to 0
    assert math.isclose(lr_at(5, 10, 2, 1e-4, 1e-2), (1e-2 + 1e-4) / 2, rel_tol=1e-12)
    assert math.isclose(lr_at(10 - 1e-9, 10, 2, 1e-4, 1e-2), 1e-4, rel_tol=1e-9)


def test_lr_restarts_at_cumulative_periods():
    T0, mult = 4, 2
    restarts = [0, 4, 12, 28, 60]
    for r in restarts:
        assert lr_at(r, T0, mult, 0.0, 1.0) == 1.0
    seq = [lr_at(s, T0, mult, 0.0, 1.0) for s in range(61)]
    increases = [s for s in range(1, 61) if seq[s] > seq[s - 1]]
    assert increases == restarts[1:]


def test_lr_step_error():
    with pytest.raises(ValueError):
        lr_at(-1, 10, 2, 0, 1)


def test_adamw_zero_grads():
    p = {"layer0.A0.W": np.array([1.0, -2.0]), "layer0.scale": np.array([3.0])}
    g = {k: np.zeros_like(v) for k, v in p.items()}
    adamw_step(p, g, AdamWState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["layer0.A0.W"], [1.0, -2.0])
    adamw_step(p, g, AdamWState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(p["layer0.A0.W"], np.array([1.0, -2.0]) * (1 - 0.05), rtol=1e-15)
    assert p["layer0.scale"][0] == 3.0  # scales are never decayed


def test_adamw_hand_recursion():
    lr, wd, b1, b2, eps = 0.01, 0.1, 0.9, 0.999, 1e-8
    grads = [0.5, -1.25, 2.0]
    theta, m, v = 1.5, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * wd * theta
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p = {"x.A0.W": np.array([1.5])}
    state = AdamWState()
    for g in grads:
        adamw_step(p, {"x.A0.W": np.array([g])}, state, lr, wd, b1, b2, eps)
    assert abs(p["x.A0.W"][0] - theta) <= 1e-12
    assert state.step == 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adamw_without_decay_is_adam(seed):
    rng = np.random.default_rng(seed)
    p1 = {"l.A0.W": rng.normal(size=4)}
    p2 = {"l.A0.W": p1["l.A0.W"].copy()}
    s1, s2 = AdamWState(), AdamWState()
    m, v = np.zeros(4), np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adamw_step(p1, {"l.A0.W": g}, s1, 0.01, 0.0)
        adamw_step(p2, {"l.A0.W": g}, s2, 0.01, 0.0, decay=lambda name: False)
        m = 0.9 * m + (1 - 0.9) * g
        v = 0.999 * v + (1 - 0.999) * g * g
    np.testing.assert_array_equal(p1["l.A0.W"], p2["l.A0.W"])
    assert s1.step == s2.step == 5
    for name in ("m", "v"):
        np.testing.assert_array_equal(getattr(s1, name)["l.A0.W"], getattr(s2, name)["l.A0.W"])
    np.testing.assert_allclose(s1.m["l.A0.W"], m, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(s1.v["l.A0.W"], v, rtol=1e-12, atol=1e-15)


def test_config_errors():
    for kwargs in ({"epochs": 0}, {"batch_size": 1}, {"lr_min": 1.0, "lr_max": 0.5}):
        with pytest.raises(TrainConfigError):
            TrainConfig(**kwargs)


def separable_set(seed=0, n=200):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 2)) * 0.5 + np.where(y[:, None] == 0, -2.0, 2.0)
    return Dataset(X, y, 2)


TOY_MODEL = {"input_dim": 2, "layers": [4, 2], "beta": 2, "fan_in": 2,
             "exceptions": {"0": {"beta": 4}}, "subnet": {"L": 2, "N": 8, "S": 0}}


def test_separable_toy_reaches_095():
    ds = separable_set()
    _, history = train(build_model(TOY_MODEL, seed=0), ds, None,
                       TrainConfig(epochs=50, batch_size=32))
    assert max(r.train_acc for r in history.records) >= 0.95
    assert len(history.records) == 50


def test_training_is_deterministic():
    ds = separable_set(1)
    cfg = TrainConfig(epochs=3, batch_size=32)
    a, ha = train(build_model(TOY_MODEL, seed=2), ds, ds, cfg)
    b, hb = train(build_model(TOY_MODEL, seed=2), ds, ds, cfg)
    assert ha.to_text() == hb.to_text()
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_training_keeps_connectivity_and_cap():
    ds = separable_set(2)
    model = build_model(TOY_MODEL, seed=1)
    conn = [layer.connectivity.copy() for layer in model.layers]
    best, _ = train(model, ds, None, TrainConfig(epochs=2, batch_size=32))
    for c, layer in zip(conn, best.layers):
        np.testing.assert_array_equal(c, layer.connectivity)
    assert best.max_table_bits == model.max_table_bits


def test_best_checkpoint_selection():
    ds = separable_set(3)
    _, history = train(build_model(TOY_MODEL, seed=0), ds, ds, TrainConfig(epochs=4, batch_size=32))
    accs = [r.test_acc for r in history.records]
    assert history.best_epoch == int(np.argmax(accs))
    lines = history.to_text().splitlines()
    assert lines[0] == "epoch\tloss\ttrain_acc\ttest_acc\tlr" and len(lines) == 5


def test_class_count_mismatch():
    ds = Dataset(np.zeros((4, 2)), np.zeros(4, int), 3)
    with pytest.raises(TrainConfigError):
        train(build_model(TOY_MODEL), ds, None, TrainConfig(epochs=1))


def test_effective_defaults_match_config_module():
    cfg = config.validate({"model": {"layers": [2], "beta": 2, "fan_in": 1}})
    assert cfg["train"]["lr_max"] == TrainConfig().lr_max
