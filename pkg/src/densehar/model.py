"""Fully convolutional dense-labeling network.

The network stacks ``block_count`` blocks of (3x3 conv, ReLU, 1x4 time
max-pool), each padded so both the feature axis and the time axis keep their
extent, then one dropout stage and a head convolution whose ``D x 1`` kernel
collapses the feature axis into ``N`` class logits per time step. A per-step
softmax turns those into class probabilities.
"""

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import (
    BadMagicError,
    ModelFormatError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)

MAGIC = b"DHFC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI8I")
INIT_SCHEMES = ("he", "glorot")


@dataclass(frozen=True)
class ArchConfig:
    input_rows: int
    class_count: int
    block_count: int = 6
    conv_kernel: tuple = (3, 3)
    filters: int = 32
    pool_width: int = 4
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.input_rows < 1:
            raise ValueError("input_rows must be >= 1")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.block_count < 1:
            raise ValueError("block_count must be >= 1")
        if self.filters < 1:
            raise ValueError("filters must be >= 1")
        if self.pool_width < 1:
            raise ValueError("pool_width must be >= 1")
        if len(self.conv_kernel) != 2 or min(self.conv_kernel) < 1:
            raise ValueError("conv_kernel must be a (rows, steps) pair of positive ints")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "conv_kernel", tuple(int(k) for k in self.conv_kernel))


@dataclass
class FcnModel:
    config: ArchConfig
    blocks: list
    head: nx.ConvParams
    version: int = field(default=FORMAT_VERSION)

    def layers(self):
        """Conv parameter sets in forward order, head last."""
        return [*self.blocks, self.head]

    def copy(self):
        return FcnModel(self.config, [b.copy() for b in self.blocks], self.head.copy(),
                        self.version)

    def astype(self, dtype):
        return FcnModel(self.config, [b.astype(dtype) for b in self.blocks],
                        self.head.astype(dtype), self.version)

    def parameter_count(self):
        return sum(p.size for p in self.layers())

    def flat_parameters(self):
        return np.concatenate([a.ravel() for p in self.layers() for a in (p.weights, p.biases)])


def parameter_count(config):
    """Parameter count implied by ``config`` alone."""
    kh, kw = config.conv_kernel
    f = config.filters
    total = 0
    for block in range(config.block_count):
        c_in = 1 if block == 0 else f
        total += f * c_in * kh * kw + f
    return total + config.class_count * f * config.input_rows + config.class_count


def receptive_field_radius(config):
    """Steps on either side of a sample that can influence its prediction."""
    conv_low, conv_high = nx.same_pad_widths(config.conv_kernel[1])
    pool_low, pool_high = nx.same_pad_widths(config.pool_width)
    return config.block_count * max(conv_low + pool_low, conv_high + pool_high)


def _init_tensor(shape, scheme, rng):
    fan_in = int(np.prod(shape[1:]))
    if scheme == "he":
        std = np.sqrt(2.0 / fan_in)
    elif scheme == "glorot":
        fan_out = shape[0] * int(np.prod(shape[2:]))
        std = np.sqrt(2.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    return (rng.standard_normal(shape) * std).astype(np.float32)


def build_fcn(config, init="he", rng=None):
    """Allocate a freshly initialised model for ``config``.

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed.
    """
    rng = np.random.default_rng(rng)
    kh, kw = config.conv_kernel
    blocks = []
    for block in range(config.block_count):
        c_in = 1 if block == 0 else config.filters
        w = _init_tensor((config.filters, c_in, kh, kw), init, rng)
        blocks.append(nx.ConvParams(w, np.zeros(config.filters, np.float32)))
    hw = _init_tensor((config.class_count, config.filters, config.input_rows, 1), init, rng)
    head = nx.ConvParams(hw, np.zeros(config.class_count, np.float32))
    return FcnModel(config, blocks, head)


class PassCount:
    def __init__(self):
        self.calls = 0
        self.passes = 0


_active_counters = []


@contextmanager
def count_forward_passes():
    """Count forward passes made inside the block.

    ``passes`` counts sequences pushed through the network (a batch of ``B``
    counts ``B``), ``calls`` counts invocations of :func:`forward`.
    """
    counter = PassCount()
    _active_counters.append(counter)
    try:
        yield counter
    finally:
        _active_counters.remove(counter)


def _as_network_input(x, config):
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, None]
        squeeze = True
    elif x.ndim == 3:
        x = x[None]
        squeeze = True
    elif x.ndim == 4:
        squeeze = False
    else:
        raise ShapeError(f"network input must be 2-D to 4-D, got shape {x.shape}", axis="ndim")
    if x.shape[1] != 1:
        raise ShapeError(f"network input must have 1 channel, got {x.shape[1]}", axis="channels")
    if x.shape[2] != config.input_rows:
        raise ShapeError(f"input has {x.shape[2]} feature rows, model expects "
                         f"{config.input_rows}", axis="rows")
    if x.shape[3] < 1:
        raise ShapeError("input must have at least one step", axis="steps")
    return x, squeeze


def forward(model, x, train=False, rng=None, return_cache=False):
    """Dense class probabilities for every step of ``x``.

    ``x`` is ``(D, T)``, ``(1, D, T)`` or a batch ``(B, 1, D, T)``; the
    result is ``(N, T)`` or ``(B, N, T)`` accordingly. Inputs are cast to the
    model's parameter dtype. With ``return_cache`` the intermediate values
    needed by :func:`backward` are returned as a second element.
    """
    cfg = model.config
    xb, squeeze = _as_network_input(x, cfg)
    xb = xb.astype(model.head.weights.dtype, copy=False)
    for counter in _active_counters:
        counter.calls += 1
        counter.passes += xb.shape[0]
    cache = []
    h = xb
    for params in model.blocks:
        conv_in = h
        pre, cols = nx.conv2d_forward(conv_in, params, same_pad=True, return_cols=True)
        act = nx.relu(pre)
        h = nx.maxpool_time(act, cfg.pool_width, same_pad=True)
        if return_cache:
            cache.append((conv_in, cols, pre, act, h))
    dropped, mask = nx.dropout(h, cfg.dropout_rate, train, rng)
    logits = nx.conv2d_forward(dropped, model.head, same_pad=False)
    probs = nx.softmax_steps(logits)
    if squeeze:
        probs = probs[0]
    if return_cache:
        return probs, {"blocks": cache, "mask": mask, "head_in": dropped}
    return probs


def backward(model, cache, dlogits):
    """Parameter gradients given the gradient of the loss w.r.t. the logits.

    ``dlogits`` has the shape of the probabilities returned by
    :func:`forward`. Returns a list of :class:`ConvParams` holding gradients,
    aligned with :meth:`FcnModel.layers`.
    """
    cfg = model.config
    g = np.asarray(dlogits)
    if g.ndim == 2:
        g = g[None]
    g = g[:, :, None, :]
    dx, dwh, dbh = nx.conv2d_backward(g, cache["head_in"], model.head, same_pad=False)
    g = nx.dropout_backward(dx, cache["mask"])
    grads = []
    for params, (conv_in, cols, pre, act, pooled) in zip(reversed(model.blocks),
                                                         reversed(cache["blocks"])):
        g = nx.maxpool_time_backward(g, act, cfg.pool_width, same_pad=True, pooled=pooled)
        g = nx.relu_backward(g, pre)
        g, dw, db = nx.conv2d_backward(g, conv_in, params, same_pad=True, cols=cols)
        grads.append(nx.ConvParams(dw, db))
    grads.reverse()
    grads.append(nx.ConvParams(dwh, dbh))
    return grads


def predict_labels(probs):
    """Argmax over classes; ``np.argmax`` already breaks ties to the lowest index."""
    return np.argmax(probs, axis=-2)


def _dropout_to_ppm(rate):
    return int(round(rate * 1_000_000))


def model_to_bytes(model):
    cfg = model.config
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, cfg.input_rows, cfg.class_count,
                          cfg.block_count, cfg.conv_kernel[0], cfg.conv_kernel[1], cfg.filters,
                          cfg.pool_width, _dropout_to_ppm(cfg.dropout_rate))
    parts = [header]
    for params in model.layers():
        parts.append(np.ascontiguousarray(params.weights, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(params.biases, dtype="<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(data):
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"truncated: {len(data)} bytes is shorter than the magic")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"truncated: header needs {_HEADER.size} bytes, "
                                 f"file has {len(data)}")
    _, version, rows, classes, blocks, kh, kw, filters, pool, ppm = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version} is not supported "
                                   f"(expected {FORMAT_VERSION})")
    try:
        cfg = ArchConfig(rows, classes, blocks, (kh, kw), filters, pool, ppm / 1_000_000)
    except ValueError as exc:
        raise ModelFormatError(f"invalid architecture in header: {exc}") from exc
    expected = _HEADER.size + 4 * parameter_count(cfg)
    if len(data) < expected:
        raise TruncatedFileError(f"truncated: expected {expected} bytes, file has {len(data)}")
    if len(data) > expected:
        raise ModelFormatError(f"{len(data) - expected} trailing bytes after parameters")
    offset = _HEADER.size

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        return arr.astype(np.float32)

    conv_blocks = []
    for block in range(blocks):
        c_in = 1 if block == 0 else filters
        w = take((filters, c_in, kh, kw))
        conv_blocks.append(nx.ConvParams(w, take((filters,))))
    hw = take((classes, filters, rows, 1))
    head = nx.ConvParams(hw, take((classes,)))
    return FcnModel(cfg, conv_blocks, head, version)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
