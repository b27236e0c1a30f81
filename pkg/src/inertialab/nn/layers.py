"""Differentiable building blocks: 1-D convolution, ReLU, LSTM, dense, MSE.

Everything is float64 and batch-first.  Each ``*_forward`` returns the
output plus an opaque cache; the matching ``*_backward`` consumes the cache
and the upstream gradient and returns gradients for the inputs and
parameters.  Non-finite values are rejected at layer boundaries.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_finite",
    "conv1d_forward",
    "conv1d_backward",
    "relu_forward",
    "relu_backward",
    "dense_forward",
    "dense_backward",
    "lstm_forward",
    "lstm_backward",
    "mse",
    "mse_gradient",
    "sgd_step",
]


def check_finite(name, array):
    if not np.all(np.isfinite(array)):
        raise FloatingPointError(f"non-finite values entering {name}")
    return array


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def conv1d_forward(x, kernels, bias, padding):
    """Cross-correlate ``x`` [B, L, C_in] with ``kernels`` [C_out, C_in, K].

    ``padding="valid"`` yields length L-K+1; ``padding="same"`` zero-pads to
    keep length L (odd K only).
    """
    x = check_finite("conv1d", np.asarray(x, dtype=np.float64))
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_out, c_in, k = kernels.shape
    if x.ndim != 3 or x.shape[2] != c_in:
        raise ValueError(f"expected input [B, L, {c_in}], got {x.shape}")
    if padding == "valid":
        if x.shape[1] < k:
            raise ValueError(f"input length {x.shape[1]} below kernel size {k}")
        xp = x
        out_len = x.shape[1] - k + 1
    elif padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding requires an odd kernel size")
        pad = (k - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        out_len = x.shape[1]
    else:
        raise ValueError(f"unknown padding {padding!r}")

    out = np.broadcast_to(bias, (x.shape[0], out_len, c_out)).copy()
    for tap in range(k):
        out += xp[:, tap : tap + out_len, :] @ kernels[:, :, tap].T
    return out, (xp, kernels, padding, x.shape[1], out_len)


def conv1d_backward(cache, grad):
    """Gradients of a conv1d: (d_input, d_kernels, d_bias)."""
    xp, kernels, padding, in_len, out_len = cache
    grad = np.asarray(grad, dtype=np.float64)
    c_out, c_in, k = kernels.shape
    d_bias = grad.sum(axis=(0, 1))
    d_kernels = np.empty_like(kernels)
    d_xp = np.zeros_like(xp)
    flat_grad = grad.reshape(-1, c_out)
    for tap in range(k):
        window = xp[:, tap : tap + out_len, :].reshape(-1, c_in)
        d_kernels[:, :, tap] = flat_grad.T @ window
        d_xp[:, tap : tap + out_len, :] += grad @ kernels[:, :, tap]
    if padding == "same":
        pad = (k - 1) // 2
        d_x = d_xp[:, pad : pad + in_len, :]
    else:
        d_x = d_xp
    return d_x, d_kernels, d_bias


def relu_forward(x):
    x = check_finite("relu", np.asarray(x, dtype=np.float64))
    mask = x > 0  # subgradient 0 at exactly 0
    return x * mask, mask


def relu_backward(cache, grad):
    return grad * cache


def dense_forward(x, weights, bias):
    """Affine map ``x @ W.T + b`` with W of shape [out, in]."""
    x = check_finite("dense", np.asarray(x, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ValueError(f"expected input [B, {weights.shape[1]}], got {x.shape}")
    return x @ weights.T + bias, (x, weights)


def dense_backward(cache, grad):
    x, weights = cache
    grad = np.asarray(grad, dtype=np.float64)
    return grad @ weights, grad.T @ x, grad.sum(axis=0)


def lstm_forward(x, w_in, w_rec, bias):
    """Run an LSTM over ``x`` [B, T, D] and return the final hidden state.

    Gate blocks are packed (input, forget, candidate, output) along the last
    axis of ``w_in`` [D, 4l], ``w_rec`` [l, 4l] and ``bias`` [4l].  Initial
    hidden and cell states are zero.
    """
    x = check_finite("lstm", np.asarray(x, dtype=np.float64))
    if x.ndim != 3:
        raise ValueError(f"expected input [B, T, D], got {x.shape}")
    b, t_steps, _ = x.shape
    units = w_rec.shape[0]
    h = np.zeros((b, units))
    c = np.zeros((b, units))
    gates_i = np.empty((t_steps, b, units))
    gates_f = np.empty((t_steps, b, units))
    gates_g = np.empty((t_steps, b, units))
    gates_o = np.empty((t_steps, b, units))
    cells = np.empty((t_steps, b, units))
    hiddens = np.empty((t_steps, b, units))
    for t in range(t_steps):
        z = x[:, t, :] @ w_in + h @ w_rec + bias
        gi = _sigmoid(z[:, :units])
        gf = _sigmoid(z[:, units : 2 * units])
        gg = np.tanh(z[:, 2 * units : 3 * units])
        go = _sigmoid(z[:, 3 * units :])
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        gates_i[t], gates_f[t], gates_g[t], gates_o[t] = gi, gf, gg, go
        cells[t], hiddens[t] = c, h
    cache = (x, w_in, w_rec, gates_i, gates_f, gates_g, gates_o, cells, hiddens)
    return h, cache


def lstm_backward(cache, grad_h):
    """Backpropagate through time from the final-hidden-state gradient."""
    x, w_in, w_rec, gi, gf, gg, go, cells, hiddens = cache
    b, t_steps, _ = x.shape
    units = w_rec.shape[0]
    d_x = np.empty_like(x)
    d_w_in = np.zeros_like(w_in)
    d_w_rec = np.zeros_like(w_rec)
    d_bias = np.zeros(4 * units)
    d_h = np.asarray(grad_h, dtype=np.float64).copy()
    d_c = np.zeros((b, units))
    for t in range(t_steps - 1, -1, -1):
        tanh_c = np.tanh(cells[t])
        d_o = d_h * tanh_c
        d_c = d_c + d_h * go[t] * (1.0 - tanh_c**2)
        c_prev = cells[t - 1] if t > 0 else np.zeros((b, units))
        d_i = d_c * gg[t]
        d_g = d_c * gi[t]
        d_f = d_c * c_prev
        d_z = np.concatenate(
            [
                d_i * gi[t] * (1.0 - gi[t]),
                d_f * gf[t] * (1.0 - gf[t]),
                d_g * (1.0 - gg[t] ** 2),
                d_o * go[t] * (1.0 - go[t]),
            ],
            axis=1,
        )
        h_prev = hiddens[t - 1] if t > 0 else np.zeros((b, units))
        d_w_in += x[:, t, :].T @ d_z
        d_w_rec += h_prev.T @ d_z
        d_bias += d_z.sum(axis=0)
        d_x[:, t, :] = d_z @ w_in.T
        d_h = d_z @ w_rec.T
        d_c = d_c * gf[t]
    return d_x, d_w_in, d_w_rec, d_bias


def mse(targets, predictions):
    """Mean squared error between equal-length vectors."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.shape != predictions.shape or targets.size == 0:
        raise ValueError("targets and predictions must share a non-empty shape")
    diff = predictions - targets
    return float(np.mean(diff * diff))


def mse_gradient(targets, predictions):
    """Gradient of :func:`mse` with respect to the predictions."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.shape != predictions.shape or targets.size == 0:
        raise ValueError("targets and predictions must share a non-empty shape")
    return (2.0 / targets.size) * (predictions - targets)


def sgd_step(weights, grad, learning_rate):
    """Plain gradient-descent update ``w - lr * grad``."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be > 0, got {learning_rate}")
    return weights - learning_rate * np.asarray(grad)
