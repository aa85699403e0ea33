"""Dense labeling of arbitrary-length sequences.

A long sequence is cut into overlapping tiles, each tile gets one eval-mode
forward pass, and the per-step class probabilities of overlapping tiles are
averaged before taking the argmax. ``window_emulation_predict`` reproduces
the cost profile of sliding-window classification with the same network for
benchmarking.
"""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as fcn
from .errors import ShapeError


@dataclass
class TilePlan:
    subseq_len: int
    tile_len: int
    starts: list
    coverage: np.ndarray

    @property
    def length(self):
        return len(self.coverage)


@dataclass
class BenchReport:
    sequence_len: int
    dense_seconds: float
    window_seconds: float
    speedup: float
    predictions_agree_pct: float
    dense_passes: int
    window_passes: int


def plan_tiles(length, subseq_len=100, overlap=0.5):
    """Tile ``[0, length)`` with stride ``round(subseq_len * (1 - overlap))``.

    A final tile that would run past the end is pulled back to end exactly at
    ``length``; a sequence shorter than ``subseq_len`` becomes a single tile.
    """
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    if subseq_len < 1:
        raise ValueError("subseq_len must be >= 1")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    tile_len = min(subseq_len, length)
    stride = max(1, math.floor(subseq_len * (1 - overlap) + 0.5))
    starts = list(range(0, length - tile_len + 1, stride))
    if starts[-1] + tile_len < length:
        starts.append(length - tile_len)
    coverage = np.zeros(length, dtype=np.int64)
    for s in starts:
        coverage[s:s + tile_len] += 1
    return TilePlan(subseq_len, tile_len, starts, coverage)


def _features(sequence, model):
    x = sequence.features if hasattr(sequence, "features") else np.asarray(sequence)
    if x.ndim != 2:
        raise ShapeError(f"sequence features must be 2-D (D, L), got {x.shape}", axis="ndim")
    if x.shape[0] != model.config.input_rows:
        raise ShapeError(f"sequence has {x.shape[0]} feature rows, model expects "
                         f"{model.config.input_rows}", axis="rows")
    return x


def dense_predict(model, sequence, plan=None):
    """Return ``(probs, labels)`` with ``probs`` shaped ``(N, L)``.

    ``sequence`` is a :class:`~densehar.data.LabeledSequence` or a ``(D, L)``
    array. ``plan`` defaults to tiles of 100 with 50% overlap.
    """
    x = _features(sequence, model)
    length = x.shape[1]
    if plan is None:
        plan = plan_tiles(length)
    elif plan.length != length:
        raise ShapeError(f"tile plan covers {plan.length} steps, sequence has {length}",
                         axis="steps")
    total = np.zeros((model.config.class_count, length), dtype=np.float64)
    for s in plan.starts:
        total[:, s:s + plan.tile_len] += fcn.forward(model, x[:, s:s + plan.tile_len])
    probs = total / plan.coverage
    return probs, fcn.predict_labels(probs)


def window_starts(length, window, stride):
    return list(range(0, length - window + 1, stride))


def window_emulation_predict(model, sequence, window=24, stride=1):
    """Label a sequence one window at a time, as window classifiers do.

    Each window gets its own forward pass and contributes the argmax of its
    last step. That label is written to the window's last sample and, when
    ``stride > 1``, back-filled over the samples since the previous window
    end. Samples before the first window end take the first window's label,
    samples after the last window end take the last one's.
    """
    x = _features(sequence, model)
    length = x.shape[1]
    if length < window:
        raise ShapeError(f"sequence length {length} is shorter than window {window}",
                         axis="steps")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    labels = np.empty(length, dtype=np.int64)
    prev_end = 0
    for s in window_starts(length, window, stride):
        probs = fcn.forward(model, x[:, s:s + window])
        end = s + window
        labels[prev_end:end] = int(np.argmax(probs[:, -1]))
        prev_end = end
    labels[prev_end:] = labels[prev_end - 1]
    return labels


def benchmark(model, sequence, plan=None, window=24, stride=1):
    """Time dense prediction against window emulation on one thread.

    Each path gets one untimed warm-up forward pass of its own input shape
    first; the pass counts in the report cover the timed runs only.
    """
    x = _features(sequence, model)
    length = x.shape[1]
    if plan is None:
        plan = plan_tiles(length)
    with threadpool_limits(limits=1):
        fcn.forward(model, x[:, :plan.tile_len])
        with fcn.count_forward_passes() as dense_count:
            started = time.perf_counter()
            _, dense_labels = dense_predict(model, x, plan)
            dense_seconds = time.perf_counter() - started
        fcn.forward(model, x[:, :window])
        with fcn.count_forward_passes() as window_count:
            started = time.perf_counter()
            window_labels = window_emulation_predict(model, x, window, stride)
            window_seconds = time.perf_counter() - started
    agree = 100.0 * float(np.mean(dense_labels == window_labels))
    return BenchReport(length, dense_seconds, window_seconds, window_seconds / dense_seconds,
                       agree, dense_count.passes, window_count.passes)


def write_predictions(path, probs, labels):
    """CSV with ``index,label,prob_0..prob_{N-1}``, one row per sample."""
    n = probs.shape[0]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label", *(f"prob_{c}" for c in range(n))])
        for j in range(probs.shape[1]):
            writer.writerow([j, int(labels[j]), *(format(float(p), ".9g") for p in probs[:, j])])


def read_prediction_labels(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        col = header.index("label")
        return np.array([int(row[col]) for row in reader], dtype=np.int64)
