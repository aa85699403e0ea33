"""Mini-batch SGD on randomly drawn labeled subsequences."""

import logging
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import model as fcn
from . import numerics as nx
from .errors import DataError, LabelError, NumericError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    subseq_len: int = 60
    batch_size: int = 10
    lr_initial: float = 1e-2
    lr_reduced: float = 1e-3
    lr_drop_at: int = 100
    stop_at: int = 150
    batches_per_iteration: int = None  # None: one nominal pass over the training samples
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_reduced <= self.lr_initial and not (
                self.lr_initial == 0 and self.lr_reduced == 0):
            raise ValueError("need 0 < lr_reduced <= lr_initial")
        if self.lr_drop_at > self.stop_at:
            raise ValueError("lr_drop_at must not exceed stop_at")
        if self.subseq_len < 1 or self.batch_size < 1:
            raise ValueError("subseq_len and batch_size must be >= 1")
        if self.batches_per_iteration is not None and self.batches_per_iteration < 1:
            raise ValueError("batches_per_iteration must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class TrainReport:
    loss_history: list
    final_model: fcn.FcnModel
    wall_clock: float


def learning_rate(iteration, cfg):
    """Rate used during 1-based ``iteration``."""
    return cfg.lr_initial if iteration <= cfg.lr_drop_at else cfg.lr_reduced


def default_batches_per_iteration(dataset, cfg):
    total = sum(len(seq.labels) for seq in dataset)
    return max(1, math.ceil(total / (cfg.batch_size * cfg.subseq_len)))


def sample_subsequences(dataset, subseq_len, count, rng):
    """Draw ``count`` subsequences uniformly over all valid (sequence, start) pairs.

    Returns ``(inputs, labels)`` shaped ``(count, 1, D, subseq_len)`` and
    ``(count, subseq_len)``.
    """
    usable = []
    for i, seq in enumerate(dataset):
        if len(seq.labels) >= subseq_len:
            usable.append(seq)
        else:
            warnings.warn(f"sequence {i} has {len(seq.labels)} samples, shorter than "
                          f"subsequence length {subseq_len}; skipped", stacklevel=2)
    if not usable:
        raise DataError(f"no sequence has at least {subseq_len} samples")
    starts_per_seq = np.array([len(s.labels) - subseq_len + 1 for s in usable])
    bounds = np.cumsum(starts_per_seq)
    picks = rng.integers(0, bounds[-1], size=count)
    which = np.searchsorted(bounds, picks, side="right")
    d = usable[0].features.shape[0]
    inputs = np.empty((count, 1, d, subseq_len), dtype=np.float32)
    labels = np.empty((count, subseq_len), dtype=np.int64)
    for n, (k, p) in enumerate(zip(which, picks)):
        start = p - (bounds[k] - starts_per_seq[k])
        inputs[n, 0] = usable[k].features[:, start:start + subseq_len]
        labels[n] = usable[k].labels[start:start + subseq_len]
    return inputs, labels


def batch_loss_and_grads(model, inputs, labels, train=True, rng=None):
    """Mean per-sample NLL over a batch and its parameter gradients."""
    probs, cache = fcn.forward(model, inputs, train=train, rng=rng, return_cache=True)
    loss, dlogits = nx.dense_nll_loss(probs, labels)
    scale = labels.size
    dlogits /= scale
    return loss / scale, fcn.backward(model, cache, dlogits)


def sgd_update(model, grads, lr, velocity=None, momentum=0.0):
    """In-place parameter update; ``velocity`` is required when ``momentum`` is nonzero."""
    for i, (params, grad) in enumerate(zip(model.layers(), grads)):
        if momentum:
            vw, vb = velocity[i]
            vw *= momentum
            vw -= lr * grad.weights
            vb *= momentum
            vb -= lr * grad.biases
            params.weights += vw
            params.biases += vb
        else:
            params.weights -= lr * grad.weights
            params.biases -= lr * grad.biases


def _check_dataset(model, dataset):
    cfg = model.config
    for i, seq in enumerate(dataset):
        if seq.features.shape[0] != cfg.input_rows:
            raise ShapeError(f"sequence {i} has {seq.features.shape[0]} feature rows, model "
                             f"expects {cfg.input_rows}", axis="rows")
        if len(seq.labels) and (seq.labels.min() < 0 or seq.labels.max() >= cfg.class_count):
            raise LabelError(f"sequence {i} has labels outside [0, {cfg.class_count})")


def train(model, dataset, cfg):
    """Train a copy of ``model`` on ``dataset`` (the training split only)."""
    _check_dataset(model, dataset)
    work = model.copy()
    rng = np.random.default_rng(cfg.seed)
    per_iteration = cfg.batches_per_iteration or default_batches_per_iteration(dataset, cfg)
    velocity = None
    if cfg.momentum:
        velocity = [(np.zeros_like(p.weights), np.zeros_like(p.biases)) for p in work.layers()]
    history = []
    started = time.perf_counter()
    for iteration in range(1, cfg.stop_at + 1):
        lr = learning_rate(iteration, cfg)
        total = 0.0
        for _ in range(per_iteration):
            inputs, labels = sample_subsequences(dataset, cfg.subseq_len, cfg.batch_size, rng)
            # divergence is reported below as a NumericError, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_loss_and_grads(work, inputs, labels, train=True, rng=rng)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at iteration {iteration}",
                                   iteration=iteration)
            sgd_update(work, grads, lr, velocity, cfg.momentum)
            total += loss
        history.append(total / per_iteration)
        log.debug("iteration %d lr %g loss %.5f", iteration, lr, history[-1])
    return TrainReport(history, work, time.perf_counter() - started)
