"""Regression networks built from the layer primitives.

Two architectures share one convolutional front end (valid conv, ReLU, same
conv, ReLU over the flattened input treated as a 1-channel sequence) and one
dense regression head:

* ``LrcnModel`` feeds the conv output sequence into an LSTM and regresses
  from the final hidden state;
* ``CnnModel`` flattens the conv output directly into the head.

With the default configuration the conv stack emits 3998 steps of 20
channels, i.e. 79,960 values, which is the flatten width of the CNN variant
and a structural diagnostic of the LRCN.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import layers

__all__ = ["LrcnConfig", "LrcnModel", "CnnModel", "make_model", "load_model"]

MODEL_MAGIC = b"LRCNMDL1"
# An open forget gate at init lets the final state reflect the whole
# sequence; the wide input-weight range makes that state vary strongly
# across samples, which plain gradient descent needs to train the head in
# few updates (small ranges leave the state nearly constant and the
# regression ill-conditioned).
LSTM_FORGET_BIAS = 1.0
LSTM_INIT_SCALE = 0.6


@dataclass(frozen=True)
class LrcnConfig:
    """Architecture and training hyperparameters.

    ``sequence_stride`` subsamples the conv output sequence before the LSTM
    (1 = full sequence); it exists to keep backpropagation through time
    affordable in small-scale runs and is a documented deviation knob, not
    part of the reference architecture.
    """

    input_len: int = 4000
    conv1_channels: int = 10
    conv2_channels: int = 20
    kernel_size: int = 3
    lstm_units: int = 32
    head_sizes: tuple = (64, 16)
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 0.02
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_min: float = 1e-6
    lr_threshold: float = 1e-8
    sequence_stride: int = 1

    def __post_init__(self):
        sizes = (
            self.input_len,
            self.conv1_channels,
            self.conv2_channels,
            self.kernel_size,
            self.lstm_units,
            self.batch_size,
            self.sequence_stride,
            *self.head_sizes,
        )
        if any(int(s) != s or s < 1 for s in sizes):
            raise ValueError("all size parameters must be integers >= 1")
        if self.input_len < self.kernel_size:
            raise ValueError("input length below kernel size")
        object.__setattr__(self, "head_sizes", tuple(self.head_sizes))

    @property
    def conv_output_len(self):
        return self.input_len - (self.kernel_size - 1)

    @property
    def flatten_size(self):
        """Element count leaving the conv stack (valid conv then same conv)."""
        return self.conv_output_len * self.conv2_channels

    @property
    def lstm_steps(self):
        return (self.conv_output_len + self.sequence_stride - 1) // self.sequence_stride


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _bias_init(rng, width):
    # small nonzero offsets keep ReLU pre-activations off the exact kink
    return rng.uniform(-0.05, 0.05, size=width)


def _head_params(rng, sizes, in_dim):
    params = {}
    prev = in_dim
    for idx, width in enumerate(sizes, start=1):
        params[f"head{idx}_w"] = _he_uniform(rng, (width, prev), prev)
        params[f"head{idx}_b"] = _bias_init(rng, width)
        prev = width
    params["out_w"] = _he_uniform(rng, (1, prev), prev)
    params["out_b"] = np.zeros(1)
    return params


def _head_forward(params, n_hidden, x):
    caches = []
    for idx in range(1, n_hidden + 1):
        x, dense_cache = layers.dense_forward(
            x, params[f"head{idx}_w"], params[f"head{idx}_b"]
        )
        x, relu_cache = layers.relu_forward(x)
        caches.append((dense_cache, relu_cache))
    out, out_cache = layers.dense_forward(x, params["out_w"], params["out_b"])
    return out[:, 0], (caches, out_cache)


def _head_backward(cache, n_hidden, grad_out):
    caches, out_cache = cache
    grads = {}
    g, grads["out_w"], grads["out_b"] = layers.dense_backward(
        out_cache, grad_out[:, None]
    )
    for idx in range(n_hidden, 0, -1):
        dense_cache, relu_cache = caches[idx - 1]
        g = layers.relu_backward(relu_cache, g)
        g, grads[f"head{idx}_w"], grads[f"head{idx}_b"] = layers.dense_backward(
            dense_cache, g
        )
    return g, grads


class _RegressionNet:
    """Shared plumbing of both architectures."""

    arch = ""

    def __init__(self, config, params, epoch=0, lr=None, best_val_mse=float("nan")):
        self.config = config
        self.params = params
        self.epoch = epoch
        self.lr = config.learning_rate if lr is None else lr
        self.best_val_mse = best_val_mse

    @classmethod
    def initialize(cls, config):
        rng = np.random.default_rng(config.seed)
        k = config.kernel_size
        params = {
            "conv1_w": _he_uniform(
                rng, (config.conv1_channels, 1, k), fan_in=k
            ),
            "conv1_b": _bias_init(rng, config.conv1_channels),
            "conv2_w": _he_uniform(
                rng,
                (config.conv2_channels, config.conv1_channels, k),
                fan_in=k * config.conv1_channels,
            ),
            "conv2_b": _bias_init(rng, config.conv2_channels),
        }
        params.update(cls._extra_params(rng, config))
        params.update(_head_params(rng, config.head_sizes, cls._head_input(config)))
        return cls(config, params)

    def _conv_stack(self, batch):
        cfg = self.config
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != cfg.input_len:
            raise ValueError(
                f"expected batch [B, {cfg.input_len}], got {batch.shape}"
            )
        x = batch[:, :, None]
        c1, cache1 = layers.conv1d_forward(
            x, self.params["conv1_w"], self.params["conv1_b"], "valid"
        )
        r1, mask1 = layers.relu_forward(c1)
        c2, cache2 = layers.conv1d_forward(
            r1, self.params["conv2_w"], self.params["conv2_b"], "same"
        )
        r2, mask2 = layers.relu_forward(c2)
        return r2, (cache1, mask1, cache2, mask2)

    def _conv_stack_backward(self, cache, grad):
        cache1, mask1, cache2, mask2 = cache
        grads = {}
        g = layers.relu_backward(mask2, grad)
        g, grads["conv2_w"], grads["conv2_b"] = layers.conv1d_backward(cache2, g)
        g = layers.relu_backward(mask1, g)
        _, grads["conv1_w"], grads["conv1_b"] = layers.conv1d_backward(cache1, g)
        return grads

    def forward(self, batch):
        pred, _ = self._forward_with_cache(batch)
        return pred

    def forward_backward(self, batch, targets):
        """One differentiation pass: (predictions, loss, parameter grads)."""
        pred, cache = self._forward_with_cache(batch)
        loss = layers.mse(targets, pred)
        grads = self._backward(cache, layers.mse_gradient(targets, pred))
        return pred, loss, grads

    def apply_gradients(self, grads, learning_rate):
        for name, grad in grads.items():
            self.params[name] = layers.sgd_step(self.params[name], grad, learning_rate)

    def copy_params(self):
        return {name: value.copy() for name, value in self.params.items()}

    # -- checkpoint container -------------------------------------------

    def save(self, path):
        cfg = asdict(self.config)
        cfg["head_sizes"] = list(cfg["head_sizes"])
        header = json.dumps({"arch": self.arch, "config": cfg}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(struct.pack("<I", len(self.params)))
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                raw = name.encode()
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(arr.tobytes())
            fh.write(struct.pack("<Qdd", self.epoch, self.lr, self.best_val_mse))


class LrcnModel(_RegressionNet):
    """Conv front end, LSTM over the conv sequence, dense head."""

    arch = "lrcn"

    @staticmethod
    def _head_input(config):
        return config.lstm_units

    @staticmethod
    def _extra_params(rng, config):
        scale = LSTM_INIT_SCALE
        shape_in = (config.conv2_channels, 4 * config.lstm_units)
        shape_rec = (config.lstm_units, 4 * config.lstm_units)
        bias = np.zeros(4 * config.lstm_units)
        bias[config.lstm_units : 2 * config.lstm_units] = LSTM_FORGET_BIAS
        return {
            "lstm_w_in": rng.uniform(-scale, scale, size=shape_in),
            "lstm_w_rec": rng.uniform(-scale, scale, size=shape_rec),
            "lstm_b": bias,
        }

    def _forward_with_cache(self, batch):
        stride = self.config.sequence_stride
        seq, conv_cache = self._conv_stack(batch)
        sub = seq[:, ::stride, :]
        hidden, lstm_cache = layers.lstm_forward(
            sub, self.params["lstm_w_in"], self.params["lstm_w_rec"], self.params["lstm_b"]
        )
        pred, head_cache = _head_forward(self.params, len(self.config.head_sizes), hidden)
        return pred, (conv_cache, seq.shape, lstm_cache, head_cache)

    def _backward(self, cache, grad_pred):
        conv_cache, seq_shape, lstm_cache, head_cache = cache
        stride = self.config.sequence_stride
        d_hidden, grads = _head_backward(cache=head_cache,
                                         n_hidden=len(self.config.head_sizes),
                                         grad_out=grad_pred)
        d_sub, d_w_in, d_w_rec, d_b = layers.lstm_backward(lstm_cache, d_hidden)
        grads["lstm_w_in"] = d_w_in
        grads["lstm_w_rec"] = d_w_rec
        grads["lstm_b"] = d_b
        d_seq = np.zeros(seq_shape)
        d_seq[:, ::stride, :] = d_sub
        grads.update(self._conv_stack_backward(conv_cache, d_seq))
        return grads


class CnnModel(_RegressionNet):
    """Same conv front end and head, with the sequence flattened instead."""

    arch = "cnn"

    @staticmethod
    def _head_input(config):
        return config.flatten_size

    @staticmethod
    def _extra_params(rng, config):
        return {}

    def _forward_with_cache(self, batch):
        seq, conv_cache = self._conv_stack(batch)
        flat = seq.reshape(seq.shape[0], -1)
        pred, head_cache = _head_forward(self.params, len(self.config.head_sizes), flat)
        return pred, (conv_cache, seq.shape, head_cache)

    def _backward(self, cache, grad_pred):
        conv_cache, seq_shape, head_cache = cache
        d_flat, grads = _head_backward(cache=head_cache,
                                       n_hidden=len(self.config.head_sizes),
                                       grad_out=grad_pred)
        grads.update(self._conv_stack_backward(conv_cache, d_flat.reshape(seq_shape)))
        return grads


_ARCHS = {"lrcn": LrcnModel, "cnn": CnnModel}


def make_model(arch, config):
    """Initialize a fresh model of the named architecture."""
    try:
        cls = _ARCHS[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}") from None
    return cls.initialize(config)


def load_model(path):
    """Reload a checkpoint; forward passes match the saved model bit-exactly."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        cfg_dict = dict(header["config"])
        cfg_dict["head_sizes"] = tuple(cfg_dict["head_sizes"])
        config = LrcnConfig(**cfg_dict)
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(
                fh.read(8 * count), dtype="<f8"
            ).reshape(shape).copy()
        epoch, lr, best = struct.unpack("<Qdd", fh.read(struct.calcsize("<Qdd")))
    cls = _ARCHS[header["arch"]]
    return cls(config, params, epoch=epoch, lr=lr, best_val_mse=best)
