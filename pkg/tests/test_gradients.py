import numpy as np
import pytest
from gradcheck import check_gradients

from knocknet.nn import CROSS_CHANNEL, SHARED_KERNEL, backward, build_model
from knocknet.nn.layers import conv1d_backward, conv1d_forward


@pytest.mark.parametrize("mode", [SHARED_KERNEL, CROSS_CHANNEL])
@pytest.mark.parametrize("seed", [0, 1])
def test_backward_matches_finite_differences(mode, seed):
    worst, checked, skipped = check_gradients(mode, seed)
    assert checked > 0.9 * (checked + skipped)
    assert worst <= 1e-4


@pytest.mark.parametrize("mode", [SHARED_KERNEL, CROSS_CHANNEL])
def test_conv_backward_input_gradient(mode, rng):
    x = rng.normal(size=(2, 3, 12))
    w = rng.normal(size=(4, 5)) if mode == SHARED_KERNEL else rng.normal(size=(4, 3, 5))
    g = rng.normal(size=(2, 4, 12 + 2 * 2 - 5 + 1))
    _, cache = conv1d_forward(x, w, 2, mode)
    dx, dw = conv1d_backward(g, w, cache)
    h = 1e-6
    for idx in [(0, 0, 0), (1, 2, 7), (0, 1, 11)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (np.sum(conv1d_forward(xp, w, 2, mode)[0] * g) - np.sum(conv1d_forward(xm, w, 2, mode)[0] * g)) / (2 * h)
        assert dx[idx] == pytest.approx(fd, rel=1e-6, abs=1e-8)
    # the output is linear in w, so sum(out * g) == sum(w * dw)
    out, _ = conv1d_forward(x, w, 2, mode)
    assert np.sum(out * g) == pytest.approx(np.sum(w * dw), rel=1e-12)


def test_zero_network_gradients():
    net = build_model(3, input_length=32)
    for v in net.params.values():
        v[...] = 0.0
    _, grads = backward(net, np.zeros((5, 32)), np.zeros(5))
    assert grads["fc2_b"][0] == pytest.approx(0.5)
    for name in ("conv1", "conv2", "conv3", "fc1_w", "fc1_b", "fc2_w"):
        assert not np.any(grads[name])


def test_l2_component_is_linear(rng):
    net = build_model(3, input_length=32, seed=3)
    x, y = rng.normal(size=(4, 32)), rng.integers(0, 2, 4).astype(float)
    _, g0 = backward(net, x, y, 0.0)
    _, g1 = backward(net, x, y, 1e-3)
    _, g2 = backward(net, x, y, 2e-3)
    for name in ("conv1", "fc1_w"):
        np.testing.assert_allclose(g2[name] - g0[name], 2 * (g1[name] - g0[name]), rtol=1e-9, atol=1e-15)
        np.testing.assert_allclose(g1[name] - g0[name], 2e-3 * net.params[name], rtol=1e-9, atol=1e-15)
    np.testing.assert_array_equal(g2["fc1_b"], g0["fc1_b"])


def test_backward_value_matches_loss(rng):
    from knocknet.nn import loss
    net = build_model(3, input_length=32, seed=4)
    x, y = rng.normal(size=(6, 32)), rng.integers(0, 6, 6) / 5
    value, _ = backward(net, x, y, 1e-3)
    assert value == pytest.approx(loss(net.forward(x), y, net, 1e-3), rel=1e-12)
