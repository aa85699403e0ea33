"""Layer primitives with forward and backward passes.

Feature maps are plain numpy arrays laid out as ``(channels, rows, steps)``,
or ``(batch, channels, rows, steps)`` when several sequences of the same
length are processed together. Every op accepts either layout and returns
the same layout it was given. Ops return the dtype of their input, so
float32 maps stay float32 and a float64 copy of a model is differentiated in
float64; convolution sums are accumulated in float64 either way.

Backward functions take the forward *inputs* rather than an opaque cache.
Whatever else they need (im2col columns, pooled maxima) is recomputed unless
the caller hands over the forward call's own copy, so every function is pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LabelError, ShapeError

LOG_CLAMP = 1e-12


@dataclass
class ConvParams:
    """Weights ``(out, in, kernel_rows, kernel_steps)`` and biases ``(out,)``."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError("conv weights must be 4-D (out, in, rows, steps)", axis="weights")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.biases.shape} does not match {self.weights.shape[0]} "
                "output channels", axis="out_channels")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_rows(self):
        return self.weights.shape[2]

    @property
    def kernel_steps(self):
        return self.weights.shape[3]

    @property
    def size(self):
        return self.weights.size + self.biases.size

    def astype(self, dtype):
        return ConvParams(self.weights.astype(dtype), self.biases.astype(dtype))

    def copy(self):
        return ConvParams(self.weights.copy(), self.biases.copy())


def same_pad_widths(extent):
    """Centered padding for a kernel extent; the odd extra cell goes high."""
    low = (extent - 1) // 2
    return low, extent - 1 - low


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"feature map must be 3-D or 4-D, got shape {x.shape}", axis="ndim")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def _conv_padding(params, same_pad):
    if same_pad:
        return same_pad_widths(params.kernel_rows), same_pad_widths(params.kernel_steps)
    return (0, 0), (0, 0)


def _check_conv_input(x, params, same_pad):
    _, c, d, t = x.shape
    if c != params.in_channels:
        raise ShapeError(
            f"input has {c} channels but kernel expects {params.in_channels}", axis="channels")
    if not same_pad:
        if d < params.kernel_rows:
            raise ShapeError(
                f"input has {d} rows, fewer than kernel rows {params.kernel_rows}", axis="rows")
        if t < params.kernel_steps:
            raise ShapeError(
                f"input has {t} steps, fewer than kernel steps {params.kernel_steps}",
                axis="steps")


def _gemm(a, b, dtype):
    """Matrix product accumulated in float64, rounded to ``dtype``."""
    return np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False)).astype(
        dtype, copy=False)


def _im2col(x, kh, kw, pad_rows, pad_steps):
    """Columns shaped ``(C * kh * kw, B * D_out * T_out)``.

    Built channel-major so the whole batch is a single GEMM.
    """
    b, c, d, t = x.shape
    xc = x.transpose(1, 0, 2, 3)
    if any(pad_rows) or any(pad_steps):
        xc = np.pad(xc, ((0, 0), (0, 0), pad_rows, pad_steps))
    d_out = xc.shape[2] - kh + 1
    t_out = xc.shape[3] - kw + 1
    cols = np.empty((c, kh, kw, b, d_out, t_out), dtype=x.dtype)
    for a in range(kh):
        for s in range(kw):
            cols[:, a, s] = xc[:, :, a:a + d_out, s:s + t_out]
    return cols.reshape(c * kh * kw, b * d_out * t_out), d_out, t_out


def conv2d_forward(x, params, same_pad=True, return_cols=False):
    """Correlate a feature map with a bank of kernels and add per-channel bias.

    With ``same_pad`` the input is zero-padded so rows and steps are
    preserved; otherwise a valid convolution is taken. ``return_cols`` also
    returns the im2col matrix, which :func:`conv2d_backward` can reuse.
    """
    xb, squeeze = _batched(x)
    _check_conv_input(xb, params, same_pad)
    pad_rows, pad_steps = _conv_padding(params, same_pad)
    cols, d_out, t_out = _im2col(xb, params.kernel_rows, params.kernel_steps, pad_rows, pad_steps)
    w = params.weights.reshape(params.out_channels, -1)
    out = _gemm(w, cols, np.float64)
    out += params.biases[:, None]
    out = out.astype(xb.dtype, copy=False)
    out = out.reshape(params.out_channels, xb.shape[0], d_out, t_out).transpose(1, 0, 2, 3)
    out = _unbatch(np.ascontiguousarray(out), squeeze)
    return (out, cols) if return_cols else out


def conv2d_backward(dout, x, params, same_pad=True, cols=None):
    """Return ``(dx, dweights, dbiases)`` for :func:`conv2d_forward`.

    ``cols`` is the optional im2col matrix from the matching forward call.
    """
    xb, squeeze = _batched(x)
    gb, _ = _batched(dout)
    _check_conv_input(xb, params, same_pad)
    kh, kw = params.kernel_rows, params.kernel_steps
    pad_rows, pad_steps = _conv_padding(params, same_pad)
    b, c, d, t = xb.shape
    if cols is None:
        cols, d_out, t_out = _im2col(xb, kh, kw, pad_rows, pad_steps)
    else:
        d_out = d + sum(pad_rows) - kh + 1
        t_out = t + sum(pad_steps) - kw + 1
        if cols.shape != (c * kh * kw, b * d_out * t_out):
            raise ShapeError("cached columns do not match the forward input", axis="cols")
    expected = (b, params.out_channels, d_out, t_out)
    if gb.shape != expected:
        raise ShapeError(f"upstream gradient shape {gb.shape} != forward output {expected}",
                         axis="upstream")
    g = gb.transpose(1, 0, 2, 3).reshape(params.out_channels, -1)
    dw = _gemm(g, cols.T, params.weights.dtype).reshape(params.weights.shape)
    dbias = g.sum(axis=1, dtype=np.float64).astype(params.biases.dtype)
    w = params.weights.reshape(params.out_channels, -1)
    dcols = _gemm(w.T, g, xb.dtype).reshape(c, kh, kw, b, d_out, t_out)
    dxp = np.zeros((c, b, d + sum(pad_rows), t + sum(pad_steps)), dtype=xb.dtype)
    for a in range(kh):
        for s in range(kw):
            dxp[:, :, a:a + d_out, s:s + t_out] += dcols[:, a, s]
    dx = dxp[:, :, pad_rows[0]:pad_rows[0] + d, pad_steps[0]:pad_steps[0] + t]
    dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
    return _unbatch(dx, squeeze), dw, dbias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    if np.shape(dout) != np.shape(x):
        raise ShapeError("upstream gradient shape does not match ReLU input", axis="upstream")
    return dout * (x > 0)


def _pool_padded(x, width, same_pad):
    if width < 1:
        raise ValueError(f"pool width must be >= 1, got {width}")
    if same_pad:
        low, high = same_pad_widths(width)
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), (low, high)), constant_values=-np.inf)
    elif x.shape[3] < width:
        raise ShapeError(f"input has {x.shape[3]} steps, fewer than pool width {width}",
                         axis="steps")
    return x, x.shape[3] - width + 1


def maxpool_time(x, width, same_pad=True):
    """Max over a ``1 x width`` window sliding along time with stride 1.

    Same padding uses ``-inf`` sentinels so padded cells never win.
    """
    xb, squeeze = _batched(x)
    xp, t_out = _pool_padded(xb, width, same_pad)
    out = xp[..., :t_out].copy()
    for k in range(1, width):
        np.maximum(out, xp[..., k:k + t_out], out=out)
    return _unbatch(out, squeeze)


def maxpool_time_backward(dout, x, width, same_pad=True, pooled=None):
    """Route each upstream gradient to its window's argmax (lowest step on ties).

    ``pooled`` is the optional forward output, saving the recomputation.
    """
    xb, squeeze = _batched(x)
    gb, _ = _batched(dout)
    xp, t_out = _pool_padded(xb, width, same_pad)
    if gb.shape != xb.shape[:3] + (t_out,):
        raise ShapeError(f"upstream gradient shape {gb.shape} != pooled shape "
                         f"{xb.shape[:3] + (t_out,)}", axis="upstream")
    if pooled is None:
        best = maxpool_time(xb, width, same_pad)
    else:
        best, _ = _batched(pooled)
    dxp = np.zeros(xp.shape, dtype=gb.dtype)
    unrouted = np.ones(best.shape, dtype=bool)
    for k in range(width):
        hit = xp[..., k:k + t_out] == best
        hit &= unrouted
        unrouted &= ~hit
        dxp[..., k:k + t_out] += gb * hit
    low = same_pad_widths(width)[0] if same_pad else 0
    dx = dxp[..., low:low + xb.shape[3]]
    return _unbatch(dx, squeeze)


def dropout(x, rate, train, rng=None):
    """Inverted dropout. Returns ``(output, mask)``; ``mask`` is None in eval mode.

    The mask holds the per-element multiplier (0 or ``1 / (1 - rate)``).
    """
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x)
    if not train or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(dout, mask):
    if mask is None:
        return dout
    if np.shape(dout) != mask.shape:
        raise ShapeError("upstream gradient shape does not match dropout mask", axis="upstream")
    return dout * mask


def softmax_steps(logits):
    """Per-step softmax over the class axis.

    ``logits`` is ``(classes, steps)`` or ``(batch, classes, steps)``. A
    batched head output ``(batch, classes, 1, steps)`` is also accepted and
    its single feature row dropped.
    """
    z = np.asarray(logits)
    if z.ndim == 4:
        if z.shape[2] != 1:
            raise ShapeError(f"softmax needs a single feature row, got {z.shape[2]}", axis="rows")
        z = z[:, :, 0, :]
    z = z - z.max(axis=-2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-2, keepdims=True)


def dense_nll_loss(probs, labels):
    """Summed per-step negative log-likelihood and its gradient w.r.t. the logits.

    Returns ``(loss, dlogits)`` where ``loss`` is a Python float accumulated
    in float64 and ``dlogits = probs - onehot(labels)``.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[-1] != labels.shape[-1] or probs.shape[:-2] != labels.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match probs shape {probs.shape}",
                         axis="steps")
    n = probs.shape[-2]
    bad = (labels < 0) | (labels >= n)
    if bad.any():
        step = int(np.argwhere(bad)[0][-1])
        raise LabelError(f"label {int(labels.flat[np.flatnonzero(bad)[0]])} at step {step} "
                         f"is outside [0, {n})", step=step)
    picked = np.take_along_axis(probs, labels[..., None, :], axis=-2)
    loss = -np.log(np.maximum(picked.astype(np.float64), LOG_CLAMP)).sum()
    grad = probs.copy()
    onehot = np.zeros_like(probs, dtype=bool)
    np.put_along_axis(onehot, labels[..., None, :], True, axis=-2)
    grad[onehot] -= 1
    return float(loss), grad
