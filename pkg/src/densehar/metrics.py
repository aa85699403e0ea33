"""Sample-level classification measures and the segment misalignment taxonomy.

All functions take two aligned integer label arrays, ground truth first.
Class ``null_class`` (usually 0) is the background label when a dataset has
one. Percentages are on a 0-100 scale.
"""

import csv
from collections import namedtuple
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import LabelError, ShapeError

Segment = namedtuple("Segment", "start end gt pred")

MISALIGNMENT_CATEGORIES = ("tp", "tn", "overfill", "underfill", "insertion", "fragmentation",
                           "deletion", "substitution")


def _aligned(gt, pred):
    gt = np.asarray(gt, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth has {gt.size} samples, prediction has {pred.size}",
                         axis="steps")
    return gt, pred


def _class_count(gt, pred, class_count):
    if class_count is None:
        return int(max(gt.max(initial=-1), pred.max(initial=-1))) + 1
    for name, arr in (("ground truth", gt), ("prediction", pred)):
        bad = np.flatnonzero((arr < 0) | (arr >= class_count))
        if bad.size:
            raise LabelError(f"{name} label {arr[bad[0]]} at step {bad[0]} is outside "
                             f"[0, {class_count})", step=int(bad[0]))
    return class_count


def accuracy(gt, pred):
    gt, pred = _aligned(gt, pred)
    if gt.size == 0:
        raise ShapeError("accuracy of an empty sequence is undefined", axis="steps")
    return 100.0 * np.count_nonzero(gt == pred) / gt.size


def confusion(gt, pred, class_count=None):
    """Counts with ground truth on rows and prediction on columns."""
    gt, pred = _aligned(gt, pred)
    n = _class_count(gt, pred, class_count)
    return np.bincount(gt * n + pred, minlength=n * n).reshape(n, n)


def row_normalized(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    totals = matrix.sum(axis=1, keepdims=True)
    return np.divide(matrix, totals, out=np.zeros_like(matrix), where=totals > 0)


def precision_recall_f(gt, pred, class_count=None):
    """Per-class precision, recall and F1 as fractions; zero where undefined."""
    conf = confusion(gt, pred, class_count).astype(np.float64)
    tp = np.diag(conf)
    predicted = conf.sum(axis=0)
    actual = conf.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f


def weighted_f(gt, pred, include_null=True, null_class=None, class_count=None):
    """Per-class F1 weighted by each class's share of ground-truth samples.

    With ``include_null=False`` the null class is dropped from the sum and
    the weights are renormalised over the remaining classes. Without a
    declared ``null_class`` every class is included.
    """
    gt, pred = _aligned(gt, pred)
    _, _, f = precision_recall_f(gt, pred, class_count)
    support = np.bincount(gt, minlength=f.size).astype(np.float64)
    if not include_null and null_class is not None:
        support[null_class] = 0.0
    total = support.sum()
    if total == 0:
        return 0.0
    return 100.0 * float(np.dot(support / total, f))


@dataclass
class ClassificationReport:
    accuracy: float
    fw_no_null: float
    fw_with_null: float
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray
    confusion: np.ndarray


def classification_report(gt, pred, class_count=None, null_class=None):
    """``fw_with_null`` is None when the dataset declares no null class."""
    gt, pred = _aligned(gt, pred)
    n = _class_count(gt, pred, class_count)
    p, r, f = precision_recall_f(gt, pred, n)
    return ClassificationReport(
        accuracy=accuracy(gt, pred),
        fw_no_null=weighted_f(gt, pred, False, null_class, n),
        fw_with_null=None if null_class is None else weighted_f(gt, pred, True, null_class, n),
        precision=100 * p,
        recall=100 * r,
        f_score=100 * f,
        confusion=confusion(gt, pred, n),
    )


def _runs(labels):
    """Start and exclusive end of each maximal constant run."""
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return starts, ends


def segmentize(gt, pred):
    """Maximal intervals on which both ``gt`` and ``pred`` are constant."""
    gt, pred = _aligned(gt, pred)
    if gt.size == 0:
        return []
    starts, ends = _runs(gt * (int(max(gt.max(), pred.max())) + 1) + pred)
    return [Segment(int(s), int(e), int(gt[s]), int(pred[s])) for s, e in zip(starts, ends)]


@dataclass
class MisalignmentReport:
    """Per-sample counts of each outcome; they always sum to the length."""

    tp: int = 0
    tn: int = 0
    overfill: int = 0
    underfill: int = 0
    insertion: int = 0
    fragmentation: int = 0
    deletion: int = 0
    substitution: int = 0

    def total(self):
        return sum(self.as_dict().values())

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def proportions(self):
        total = self.total()
        return {k: (v / total if total else 0.0) for k, v in self.as_dict().items()}


def misalignment(gt, pred, null_class=None):
    """Assign every sample one outcome by the segment rules.

    For a mismatching segment with true label ``g`` and predicted ``p``:

    * ``g`` and ``p`` both non-null: substitution.
    * ``p`` null: look at the true event (maximal run of ``g``) holding the
      segment. If any of its samples is predicted correctly, segments
      touching the event's start or end are underfill and the others are
      fragmentation; otherwise the whole event is deletion.
    * ``g`` null: look at the predicted event (maximal run of ``p``). If it
      overlaps any true sample of class ``p`` it is overfill, else insertion.

    Matching segments count as tp, or tn when the label is null. Without a
    null class only tp and substitution occur.
    """
    gt, pred = _aligned(gt, pred)
    counts = dict.fromkeys(MISALIGNMENT_CATEGORIES, 0)
    if gt.size == 0:
        return MisalignmentReport(**counts)
    gt_starts, gt_ends = _runs(gt)
    pr_starts, pr_ends = _runs(pred)
    gt_run = np.repeat(np.arange(gt_starts.size), gt_ends - gt_starts)
    pr_run = np.repeat(np.arange(pr_starts.size), pr_ends - pr_starts)
    correct = gt == pred

    for seg in segmentize(gt, pred):
        n = seg.end - seg.start
        if seg.gt == seg.pred:
            counts["tn" if seg.gt == null_class else "tp"] += n
        elif null_class is None or (seg.gt != null_class and seg.pred != null_class):
            counts["substitution"] += n
        elif seg.pred == null_class:
            run = gt_run[seg.start]
            ev_start, ev_end = gt_starts[run], gt_ends[run]
            if not correct[ev_start:ev_end].any():
                counts["deletion"] += n
            elif seg.start == ev_start or seg.end == ev_end:
                counts["underfill"] += n
            else:
                counts["fragmentation"] += n
        else:
            run = pr_run[seg.start]
            ev_start, ev_end = pr_starts[run], pr_ends[run]
            if (gt[ev_start:ev_end] == seg.pred).any():
                counts["overfill"] += n
            else:
                counts["insertion"] += n
    return MisalignmentReport(**counts)


def report_rows(cls_report, mis_report):
    """Flat ``(metric, value)`` rows for CSV output."""
    rows = [("accuracy", cls_report.accuracy), ("fw", cls_report.fw_no_null)]
    if cls_report.fw_with_null is not None:
        rows.append(("nfw", cls_report.fw_with_null))
    for c in range(cls_report.f_score.size):
        rows += [(f"precision_{c}", cls_report.precision[c]),
                 (f"recall_{c}", cls_report.recall[c]),
                 (f"f_{c}", cls_report.f_score[c])]
    rows += list(mis_report.as_dict().items())
    return rows


def write_metrics_csv(path, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value)) if isinstance(value, float) or
                             isinstance(value, np.floating) else int(value)])


def read_metrics_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        out = {}
        for name, value in reader:
            out[name] = float(value) if any(ch in value for ch in ".eEn") else int(value)
        return out


def write_confusion_csv(path, matrix):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        n = matrix.shape[0]
        writer.writerow(["gt\\pred", *range(n)])
        for a in range(n):
            writer.writerow([a, *(int(v) for v in matrix[a])])


def format_report(cls_report, mis_report):
    lines = [f"accuracy (AC)           {cls_report.accuracy:7.2f}",
             f"weighted F (F_w)        {cls_report.fw_no_null:7.2f}"]
    if cls_report.fw_with_null is not None:
        lines.append(f"weighted F, null (NF_w) {cls_report.fw_with_null:7.2f}")
    lines.append("")
    lines.append("class  precision  recall      F")
    for c in range(cls_report.f_score.size):
        lines.append(f"{c:5d}  {cls_report.precision[c]:9.2f}  {cls_report.recall[c]:6.2f}  "
                     f"{cls_report.f_score[c]:6.2f}")
    lines.append("")
    lines.append("misalignment        samples  proportion")
    props = mis_report.proportions()
    for name, value in mis_report.as_dict().items():
        lines.append(f"{name:18s} {value:8d}  {props[name]:10.4f}")
    lines.append("")
    lines.append("confusion (rows = ground truth, columns = prediction)")
    for row in cls_report.confusion:
        lines.append(" ".join(f"{v:7d}" for v in row))
    return "\n".join(lines) + "\n"
