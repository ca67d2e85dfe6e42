import numpy as np
import pytest

from knocknet.dataset import BinaryLabel
from knocknet.exceptions import ConfigurationError
from knocknet.nn import TrainConfig, backward, build_model, classify, train
from knocknet.nn.network import project_gradients, project_parameters
from knocknet.nn.training import STOP_MAX_EPOCHS, Adam


def toy_set(n, length=64, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    tone = np.sin(2 * np.pi * 0.2 * t[None, :] + rng.uniform(0, 2 * np.pi, (n, 1)))
    flat = np.zeros((n, length))
    x = np.concatenate([tone, flat]) + rng.normal(0, 0.05, (2 * n, length))
    y = np.concatenate([np.ones(n), np.zeros(n)])
    return x, y


def test_separable_toy_reaches_full_accuracy():
    x, y = toy_set(40)
    xt, yt = toy_set(20, seed=1)
    net = build_model(5, input_length=64, seed=0, zero_mean_input=True)
    best, report = train(net, x, y, xt, yt, TrainConfig(max_epochs=50, batch_size=16, learning_rate=3e-3))
    assert report.stop_epoch <= 50
    assert report.best_test_accuracy == 1.0
    assert np.mean((best.forward(xt) >= 0.5) == (yt >= 0.5)) == 1.0


def test_zero_epochs_returns_initial_net():
    x, y = toy_set(5)
    net = build_model(5, input_length=64, seed=2)
    before = net.copy()
    best, report = train(net, x, y, x, y, TrainConfig(max_epochs=0))
    assert report.stop_reason == STOP_MAX_EPOCHS
    assert report.stop_epoch == 0
    for name in before.params:
        np.testing.assert_array_equal(best.params[name], before.params[name])


def test_identical_seeds_give_identical_reports():
    x, y = toy_set(12)
    cfg = TrainConfig(max_epochs=4, batch_size=8, seed=5)
    runs = [train(build_model(5, input_length=64, seed=1), x, y, x, y, cfg) for _ in range(2)]
    assert runs[0][1].to_dict() == runs[1][1].to_dict()
    for name in runs[0][0].params:
        assert runs[0][0].params[name].tobytes() == runs[1][0].params[name].tobytes()


def test_empty_set_is_a_configuration_error():
    net = build_model(5, input_length=64)
    x, y = toy_set(3)
    with pytest.raises(ConfigurationError):
        train(net, x[:0], y[:0], x, y)
    with pytest.raises(ConfigurationError):
        train(net, x, y, x[:0], y[:0])


@pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"batch_size": 0}, {"max_epochs": -1},
                                    {"l2_penalty": -1}, {"patience": 0}])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_adam_steps_decrease_loss():
    x, y = toy_set(16)
    net = build_model(5, input_length=64, seed=3)
    opt = Adam(1e-3)
    first, _ = backward(net, x, y)
    for _ in range(50):
        _, g = backward(net, x, y)
        opt.step(net.params, g)
    last, _ = backward(net, x, y)
    assert last < first


def test_adam_first_step_is_lr_times_sign():
    # bias-corrected first step is lr * g / (|g| + eps) elementwise
    params = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -4.0, 1e-3])}
    Adam(0.1, epsilon=0.0).step(params, g)
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 2.9], rtol=1e-12)


def test_projection_keeps_first_layer_zero_mean(rng):
    net = build_model(5, input_length=64, seed=4, zero_mean_input=True)
    np.testing.assert_allclose(net.params["conv1"].mean(axis=-1), 0, atol=1e-15)
    x, y = toy_set(8)
    opt = Adam(1e-2)
    for _ in range(5):
        _, g = backward(net, x, y)
        opt.step(net.params, project_gradients(net, g))
        project_parameters(net)
    np.testing.assert_allclose(net.params["conv1"].mean(axis=-1), 0, atol=1e-12)


def _constant_net(p):
    net = build_model(3, input_length=32)
    net.params["fc2_w"][...] = 0.0
    net.params["fc2_b"][...] = np.log(p / (1 - p))
    return net


@pytest.mark.parametrize("p,label,cls", [(0.93, BinaryLabel.KNOCKING, 5), (0.5, BinaryLabel.KNOCKING, 3),
                                         (0.09, BinaryLabel.NORMAL, 0)])
def test_classify_examples(p, label, cls):
    prob, got_label, got_cls = classify(_constant_net(p), np.zeros(32))
    assert prob == pytest.approx(p, abs=1e-12)
    assert got_label == label
    assert got_cls == cls


def test_training_keeps_first_layer_zero_mean():
    x, y = toy_set(8)
    net = build_model(5, input_length=64, seed=4, zero_mean_input=True)
    best, _ = train(net, x, y, x, y, TrainConfig(max_epochs=3, batch_size=4, learning_rate=1e-2))
    for n in (net, best):
        np.testing.assert_allclose(n.params["conv1"].mean(axis=-1), 0, atol=1e-12)
