"""Forward and backward passes of the few layer types KnockNet needs.

Activations are laid out ``(batch, channels, length)``. Convolutions are
cross-correlations (no kernel flip), stride 1, symmetric zero padding.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

SHARED_KERNEL = "shared_kernel"
CROSS_CHANNEL = "cross_channel"
CONV_MODES = (SHARED_KERNEL, CROSS_CHANNEL)


def conv_output_length(length, kernel_size, padding):
    return length + 2 * padding - kernel_size + 1


def _zero_pad(x, padding):
    # np.pad's generality costs more than the copy itself for small arrays
    out = np.zeros(x.shape[:-1] + (x.shape[-1] + 2 * padding,))
    out[..., padding:padding + x.shape[-1]] = x
    return out


def _im2col(padded, k):
    # (..., L_pad) -> contiguous (..., L_out, k)
    return np.ascontiguousarray(sliding_window_view(padded, k, axis=-1))


def conv1d_forward(x, w, padding, mode):
    """Convolve ``x`` (B, C_in, L) with ``w``.

    shared_kernel: ``w`` is (C_out, k); every output channel filters the sum
    of the input channels with its own kernel.
    cross_channel: ``w`` is (C_out, C_in, k), the usual dense convolution.
    Returns ``(out, cache)``.
    """
    b = x.shape[0]
    k = w.shape[-1]
    c_out = w.shape[0]
    if mode == SHARED_KERNEL:
        summed = x.sum(axis=1) if x.shape[1] > 1 else x[:, 0]
        cols = _im2col(_zero_pad(summed, padding), k)  # (B, L_out, k)
        l_out = cols.shape[1]
        flat = cols.reshape(b * l_out, k)
    else:
        cols = _im2col(_zero_pad(x, padding), k)  # (B, C_in, L_out, k)
        l_out = cols.shape[2]
        flat = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(b * l_out, -1)
    out = (flat @ w.reshape(c_out, -1).T).reshape(b, l_out, c_out).transpose(0, 2, 1)
    return np.ascontiguousarray(out), (flat, x.shape, padding, mode)


def conv1d_backward(dout, w, cache):
    flat, x_shape, padding, mode = cache
    b, c_in, length = x_shape
    c_out, k = w.shape[0], w.shape[-1]
    l_out = dout.shape[-1]
    g_t = np.ascontiguousarray(dout.transpose(1, 0, 2)).reshape(c_out, b * l_out)
    dw = (g_t @ flat).reshape(w.shape)
    # Column gradients laid out (C_in, k, B, L_out) so each kernel tap is one
    # contiguous slab to scatter back onto the padded input.
    dcols = (w.reshape(c_out, -1).T @ g_t).reshape(-1, k, b, l_out)
    dpad = np.zeros((dcols.shape[0], b, length + 2 * padding))
    for j in range(k):
        dpad[:, :, j:j + l_out] += dcols[:, j]
    dx = dpad[:, :, padding:padding + length].transpose(1, 0, 2)
    if mode == SHARED_KERNEL:
        dx = np.broadcast_to(dx, (b, c_in, length))
    return dx, dw


def maxpool_forward(x):
    """Max pooling with kernel size and stride 2; a trailing odd sample is dropped.

    On ties the first element of a pair wins.
    """
    n = x.shape[-1] // 2
    left = x[..., 0:2 * n:2]
    right = x[..., 1:2 * n:2]
    take_right = right > left
    return np.where(take_right, right, left), (take_right, x.shape)


def maxpool_backward(dout, cache):
    take_right, x_shape = cache
    n = take_right.shape[-1]
    dx = np.zeros(x_shape)
    dx[..., 0:2 * n:2] = np.where(take_right, 0.0, dout)
    dx[..., 1:2 * n:2] = np.where(take_right, dout, 0.0)
    return dx


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(z):
    return expit(z)
