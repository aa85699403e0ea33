"""Central finite-difference check of analytic gradients.

The check runs in float64 on a copy of the target so perturbations of size
``eps`` are not swamped by float32 rounding.
"""

from dataclasses import dataclass

import numpy as np

from . import model as fcn
from . import numerics as nx


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: tuple
    probed_count: int


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _model_loss_and_grads(model, x, labels):
    probs, cache = fcn.forward(model, x, train=False, return_cache=True)
    loss, dlogits = nx.dense_nll_loss(probs, labels)
    return loss, fcn.backward(model, cache, dlogits)


def _conv_loss_and_grads(params, x, labels):
    logits = nx.conv2d_forward(x, params, same_pad=True)
    probs = nx.softmax_steps(logits[..., 0, :] if np.ndim(x) == 3 else logits)
    loss, dlogits = nx.dense_nll_loss(probs, labels)
    if np.ndim(x) == 3:
        dlogits = dlogits[:, None, :]
    _, dw, db = nx.conv2d_backward(dlogits, x, params, same_pad=True)
    return loss, [nx.ConvParams(dw, db)]


def grad_check(target, x, labels, eps=1e-3, probes=200, rng=None):
    """Compare analytic and finite-difference gradients on random parameters.

    ``target`` is either an :class:`~densehar.model.FcnModel` (evaluated in
    eval mode) or a single :class:`~densehar.numerics.ConvParams`, in which
    case the loss is the dense NLL of a softmax over that conv's output,
    which must have one feature row. The worst index is ``(layer, tensor,
    flat_index)`` with ``tensor`` 0 for weights and 1 for biases.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}")
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    if isinstance(target, fcn.FcnModel):
        work = target.astype(np.float64)
        layers = work.layers()

        def loss_fn():
            return nx.dense_nll_loss(fcn.forward(work, x), labels)[0]

        _, grads = _model_loss_and_grads(work, x, labels)
    else:
        work = target.astype(np.float64)
        layers = [work]

        def loss_fn():
            logits = nx.conv2d_forward(x, work, same_pad=True)
            return nx.dense_nll_loss(
                nx.softmax_steps(logits[..., 0, :] if x.ndim == 3 else logits), labels)[0]

        _, grads = _conv_loss_and_grads(work, x, labels)

    tensors = [(li, ti) for li in range(len(layers)) for ti in (0, 1)]
    sizes = np.array([(layers[li].weights if ti == 0 else layers[li].biases).size
                      for li, ti in tensors])
    flat_choices = rng.choice(sizes.sum(), size=probes, replace=probes > sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst, worst_index = 0.0, None
    for flat in flat_choices:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        li, ti = tensors[k]
        idx = int(flat - offsets[k])
        arr = layers[li].weights if ti == 0 else layers[li].biases
        garr = grads[li].weights if ti == 0 else grads[li].biases
        view = arr.reshape(-1)
        original = view[idx]
        view[idx] = original + eps
        plus = loss_fn()
        view[idx] = original - eps
        minus = loss_fn()
        view[idx] = original
        numeric = (plus - minus) / (2 * eps)
        err = relative_error(float(garr.reshape(-1)[idx]), numeric)
        if worst_index is None or err > worst:
            worst, worst_index = err, (li, ti, idx)
    return GradCheckReport(worst, worst_index, int(probes))
