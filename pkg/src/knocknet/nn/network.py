"""The theory-guided knock CNN: three bias-free convolutions, two dense layers.

Topology for base kernel size k and input length L (padding 5, stride 1)::

    conv1  k,      4 ch  -> ReLU -> maxpool 2
    conv2  k,      8 ch  -> ReLU -> maxpool 2
    conv3  2k+1,  16 ch  -> ReLU -> maxpool 2
    flatten n -> fc1 n -> n//2 (+bias) -> ReLU -> fc2 n//2 -> 1 (+bias) -> sigmoid
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, DomainError, ShapeError
from ..signals import WINDOW_LENGTH, CrankAngleSignal, kernel_size_for_frequency
from .layers import (
    CONV_MODES,
    SHARED_KERNEL,
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    maxpool_backward,
    maxpool_forward,
    relu,
    sigmoid,
)

PADDING = 5
POOL = 2
CHANNELS = (4, 8, 16)
PROB_EPS = 1e-7

# Base kernel sizes of the four published variants.
VARIANTS = {"a": 30, "b": 23, "c": 18, "d": 11}
# Target frequencies (Hz) those kernel sizes were derived from.
VARIANT_TARGET_HZ = {"a": 3000.0, "b": 3900.0, "c": 4900.0, "d": 8250.0}

# First-layer kernels are kept zero-mean and start at a fraction of the
# Glorot range. Every raw pressure sample is large and positive, so a kernel's
# DC response otherwise swamps both its output and its gradient.
FIRST_LAYER_GAIN = 0.1

CONV_NAMES = ("conv1", "conv2", "conv3")
DENSE_WEIGHTS = ("fc1_w", "fc2_w")
PARAM_ORDER = ("conv1", "conv2", "conv3", "fc1_w", "fc1_b", "fc2_w", "fc2_b")


def kernel_for_variant(variant):
    """Kernel size for a published variant name ('a'..'d') or an integer."""
    if isinstance(variant, (int, np.integer)):
        return int(variant)
    key = str(variant).strip().lower()
    if key.isdigit():
        return int(key)
    if key not in VARIANTS:
        raise ConfigurationError(f"unknown model variant {variant!r}; expected one of {sorted(VARIANTS)}")
    return VARIANTS[key]


def layer_lengths(kernel_size, input_length=WINDOW_LENGTH):
    """Signal length after each stage: [input, c1, p1, c2, p2, c3, p3].

    Raises `ShapeError` naming the first layer that would collapse.
    """
    kernels = (kernel_size, kernel_size, 2 * kernel_size + 1)
    lengths = [input_length]
    length = input_length
    for name, k in zip(CONV_NAMES, kernels):
        length = conv_output_length(length, k, PADDING)
        if length < POOL:
            raise ShapeError(f"{name}: input of length {lengths[-1]} too short for kernel {k} with padding {PADDING}")
        lengths.append(length)
        length //= POOL
        lengths.append(length)
    return lengths


@dataclass
class KnockNet:
    kernel_size: int
    input_length: int = WINDOW_LENGTH
    mode: str = SHARED_KERNEL
    params: dict = field(default_factory=dict)
    zero_mean_input: bool = True

    @property
    def kernel_sizes(self):
        k = self.kernel_size
        return (k, k, 2 * k + 1)

    @property
    def flat_length(self):
        return CHANNELS[-1] * layer_lengths(self.kernel_size, self.input_length)[-1]

    @property
    def hidden(self):
        return self.flat_length // 2

    def param_shapes(self):
        shapes = {}
        c_in = 1
        for name, k, c_out in zip(CONV_NAMES, self.kernel_sizes, CHANNELS):
            shapes[name] = (c_out, k) if self.mode == SHARED_KERNEL else (c_out, c_in, k)
            c_in = c_out
        n, h = self.flat_length, self.hidden
        shapes.update(fc1_w=(n, h), fc1_b=(h,), fc2_w=(h, 1), fc2_b=(1,))
        return shapes

    def copy(self):
        return KnockNet(self.kernel_size, self.input_length, self.mode,
                        {k: v.copy() for k, v in self.params.items()}, self.zero_mean_input)

    # -- inference ---------------------------------------------------------

    def _check_input(self, x):
        if isinstance(x, CrankAngleSignal):
            x = x.samples
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_length:
            raise ShapeError(f"expected windows of length {self.input_length}, got shape {x.shape}")
        return x

    def forward(self, x, keep_cache=False):
        """Knock probabilities for one window or a batch of windows."""
        x = self._check_input(x)
        a = x[:, None, :]
        caches = []
        for name in CONV_NAMES:
            z, conv_cache = conv1d_forward(a, self.params[name], PADDING, self.mode)
            r = relu(z)
            a, pool_cache = maxpool_forward(r)
            caches.append((conv_cache, z, pool_cache))
        flat = a.reshape(len(x), -1)
        h_pre = flat @ self.params["fc1_w"] + self.params["fc1_b"]
        h = relu(h_pre)
        logit = (h @ self.params["fc2_w"] + self.params["fc2_b"])[:, 0]
        p = np.clip(sigmoid(logit), PROB_EPS, 1 - PROB_EPS)
        if keep_cache:
            return p, (caches, a.shape, flat, h_pre, h, logit)
        return p

    def __call__(self, x):
        return self.forward(x)


def build_model(base_kernel, input_length=WINDOW_LENGTH, mode=SHARED_KERNEL, seed=0,
                zero_mean_input=True, first_layer_gain=FIRST_LAYER_GAIN):
    """Construct a KnockNet with Glorot-uniform weights and zero biases.

    With ``zero_mean_input`` the first-layer kernels are centred after the
    draw and scaled by ``first_layer_gain``; training then keeps them
    zero-mean (see `project_gradients`).
    """
    if mode not in CONV_MODES:
        raise ConfigurationError(f"unknown convolution mode {mode!r}; expected one of {CONV_MODES}")
    k = kernel_for_variant(base_kernel)
    if k < 1:
        raise ConfigurationError("kernel size must be >= 1")
    layer_lengths(k, input_length)
    net = KnockNet(k, input_length, mode, zero_mean_input=bool(zero_mean_input))
    rng = np.random.default_rng(seed)
    c_in = 1
    for name, kk, c_out in zip(CONV_NAMES, net.kernel_sizes, CHANNELS):
        shape = net.param_shapes()[name]
        limit = np.sqrt(6.0 / (kk * c_in + kk * c_out))
        net.params[name] = rng.uniform(-limit, limit, shape)
        c_in = c_out
    for w, b in (("fc1_w", "fc1_b"), ("fc2_w", "fc2_b")):
        fan_in, fan_out = net.param_shapes()[w]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        net.params[w] = rng.uniform(-limit, limit, (fan_in, fan_out))
        net.params[b] = np.zeros(fan_out)
    if net.zero_mean_input:
        w = net.params["conv1"]
        net.params["conv1"] = first_layer_gain * (w - w.mean(axis=-1, keepdims=True))
    return net


def build_variant(variant, input_length=WINDOW_LENGTH, mode=SHARED_KERNEL, seed=0, **kwargs):
    return build_model(kernel_for_variant(variant), input_length, mode, seed, **kwargs)


def project_gradients(net, grads):
    """Restrict an update direction to the model's constraint set (in place).

    For zero-mean first-layer kernels this removes the per-kernel mean of the
    first-layer gradient. Adaptive optimisers rescale coordinates, so
    `project_parameters` is still needed after each step.
    """
    if net.zero_mean_input:
        g = grads["conv1"]
        grads["conv1"] = g - g.mean(axis=-1, keepdims=True)
    return grads


def project_parameters(net):
    """Re-centre zero-mean first-layer kernels (in place) after an update."""
    if net.zero_mean_input:
        w = net.params["conv1"]
        w -= w.mean(axis=-1, keepdims=True)
    return net


def count_parameters(net):
    """Learnable parameters per layer (pools/sigmoid contribute 0) and total."""
    shapes = net.param_shapes()
    counts = {name: int(np.prod(shapes[name])) for name in CONV_NAMES}
    counts["fc1"] = int(np.prod(shapes["fc1_w"]) + shapes["fc1_b"][0])
    counts["fc2"] = int(np.prod(shapes["fc2_w"]) + shapes["fc2_b"][0])
    counts["total"] = sum(counts.values())
    return counts


def forward(net, window):
    return net.forward(window)


def _check_targets(y):
    y = np.asarray(y, dtype=float).ravel()
    if np.any(~np.isfinite(y)) or np.any((y < 0) | (y > 1)):
        raise DomainError("labels must lie in [0, 1]")
    return y


def weight_sq_sum(net):
    return sum(float(np.vdot(net.params[n], net.params[n])) for n in CONV_NAMES + DENSE_WEIGHTS)


def loss(probabilities, labels, net=None, l2_penalty=0.0):
    """Mean binary cross-entropy (probabilities clamped) plus L2 on all weights.

    Biases are not penalised.
    """
    y = _check_targets(labels)
    p = np.clip(np.asarray(probabilities, dtype=float).ravel(), PROB_EPS, 1 - PROB_EPS)
    bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    if net is not None and l2_penalty:
        bce += l2_penalty * weight_sq_sum(net)
    return float(bce)


def backward(net, x, labels, l2_penalty=0.0, return_output=False):
    """Loss and exact gradients w.r.t. every parameter for one batch.

    Returns ``(loss_value, grads)`` with ``grads`` keyed like ``net.params``
    (plus the batch probabilities when ``return_output``). Gradients are those
    of the unconstrained loss; `project_gradients` applies model constraints.
    """
    y = _check_targets(labels)
    p, (caches, pooled_shape, flat, h_pre, h, logit) = net.forward(x, keep_cache=True)
    if len(y) != len(p):
        raise ShapeError(f"{len(p)} windows but {len(y)} labels")
    # Cross-entropy on the logit: identical to the clamped loss while
    # p lies in [eps, 1 - eps], but keeps a gradient once the sigmoid saturates.
    value = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
    if l2_penalty:
        value += l2_penalty * weight_sq_sum(net)
    b = len(y)
    dlogit = ((sigmoid(logit) - y) / b)[:, None]

    grads = {}
    grads["fc2_w"] = h.T @ dlogit
    grads["fc2_b"] = dlogit.sum(axis=0)
    dh = (dlogit @ net.params["fc2_w"].T) * (h_pre > 0)
    grads["fc1_w"] = flat.T @ dh
    grads["fc1_b"] = dh.sum(axis=0)
    da = (dh @ net.params["fc1_w"].T).reshape(pooled_shape)
    for name, (conv_cache, z, pool_cache) in zip(reversed(CONV_NAMES), reversed(caches)):
        dr = maxpool_backward(da, pool_cache)
        dz = dr * (z > 0)
        da, grads[name] = conv1d_backward(dz, net.params[name], conv_cache)
    if l2_penalty:
        for name in CONV_NAMES + DENSE_WEIGHTS:
            grads[name] = grads[name] + 2.0 * l2_penalty * net.params[name]
    if return_output:
        return value, grads, p
    return value, grads
