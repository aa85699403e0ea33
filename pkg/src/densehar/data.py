"""Dataset ingestion, min-max scaling, splitting and a synthetic generator."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class LabeledSequence:
    """``features`` is ``(D, L)`` float32, ``labels`` is ``(L,)`` int64."""

    features: np.ndarray
    labels: np.ndarray
    channel_names: list = None
    sample_rate_hz: float = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D (channels, samples), got {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[1]:
            raise DataError(f"{self.labels.shape[0]} labels for {self.features.shape[1]} samples")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def channels(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class DatasetSchema:
    """Contents of the ``key=value`` schema sidecar."""

    class_count: int
    null_class: int = None
    feature_columns: int = None
    has_header: bool = True
    delimiter: str = ","


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise DataError(f"expected a boolean, got {text!r}")


def read_schema(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value", row=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    if "classCount" not in values:
        raise DataError(f"{path}: schema must declare classCount")
    unknown = set(values) - {"classCount", "nullClass", "featureColumns", "hasHeader", "delimiter"}
    if unknown:
        raise DataError(f"{path}: unknown schema keys {sorted(unknown)}")
    try:
        null = values.get("nullClass", "none")
        return DatasetSchema(
            class_count=int(values["classCount"]),
            null_class=None if null.lower() == "none" else int(null),
            feature_columns=int(values["featureColumns"]) if "featureColumns" in values else None,
            has_header=_parse_bool(values.get("hasHeader", "true")),
            delimiter=values.get("delimiter", ",") or ",",
        )
    except ValueError as exc:
        raise DataError(f"{path}: bad schema value: {exc}") from exc


def write_schema(schema, path):
    null = "none" if schema.null_class is None else str(schema.null_class)
    lines = [f"classCount={schema.class_count}", f"nullClass={null}"]
    if schema.feature_columns is not None:
        lines.append(f"featureColumns={schema.feature_columns}")
    lines.append(f"hasHeader={'true' if schema.has_header else 'false'}")
    lines.append(f"delimiter={schema.delimiter}")
    Path(path).write_text("\n".join(lines) + "\n")


def _looks_like_header(row):
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_csv(path, feature_columns=None, label_column=-1, has_header=None, delimiter=","):
    """Read one labeled sequence, one row per sample.

    ``feature_columns`` is a list of column indices (default: every column
    except the label). ``has_header=None`` treats a first row containing any
    non-numeric cell as a header.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    names = None
    if rows and (has_header or (has_header is None and _looks_like_header(rows[0]))):
        names, rows = rows[0], rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names) if names else len(rows[0])
    label_col = label_column % width
    if feature_columns is None:
        feature_columns = [c for c in range(width) if c != label_col]
    features = np.empty((len(feature_columns), len(rows)), dtype=np.float32)
    labels = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} columns, expected {width}", row=r)
        for out_c, c in enumerate(feature_columns):
            cell = row[c].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r} column {c}: cannot parse {cell!r} as a number",
                                row=r, column=c) from None
            if not math.isfinite(value):
                raise DataError(f"{path}: row {r} column {c}: non-finite value", row=r, column=c)
            features[out_c, r] = value
        cell = row[label_col].strip()
        try:
            label = int(cell)
        except ValueError:
            raise DataError(f"{path}: row {r} column {label_col}: label {cell!r} is not an "
                            "integer", row=r, column=label_col) from None
        if label < 0:
            raise DataError(f"{path}: row {r}: negative label {label}", row=r, column=label_col)
        labels[r] = label
    channel_names = [names[c] for c in feature_columns] if names else None
    return LabeledSequence(features, labels, channel_names)


def write_csv(seq, path, delimiter=",", header=True):
    names = seq.channel_names or [f"ch{c}" for c in range(seq.channels)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if header:
            writer.writerow([*names, "label"])
        for j in range(len(seq)):
            writer.writerow([*(format(float(v), ".9g") for v in seq.features[:, j]),
                             int(seq.labels[j])])


@dataclass
class ScalerParams:
    mins: np.ndarray
    maxs: np.ndarray


def fit_scaler(train):
    """Per-channel min and max over all training sequences."""
    if not train:
        raise DataError("cannot fit a scaler on an empty training set")
    stacked = np.concatenate([s.features for s in train], axis=1)
    if stacked.shape[1] == 0:
        raise DataError("cannot fit a scaler on sequences with no samples")
    return ScalerParams(stacked.min(axis=1), stacked.max(axis=1))


def apply_scaler(params, seq):
    """Map each channel to [0, 1]; out-of-range values clamp, constant channels map to 0."""
    mins = params.mins[:, None].astype(np.float64)
    span = params.maxs[:, None].astype(np.float64) - mins
    x = seq.features.astype(np.float64)
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, np.clip((x - mins) / safe, 0.0, 1.0), 0.0)
    return LabeledSequence(scaled.astype(np.float32), seq.labels.copy(), seq.channel_names,
                           seq.sample_rate_hz)


def write_scaler(params, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel", "min", "max"])
        for c, (lo, hi) in enumerate(zip(params.mins, params.maxs)):
            writer.writerow([c, format(float(lo), ".9g"), format(float(hi), ".9g")])


def read_scaler(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    try:
        mins = np.array([float(r[1]) for r in rows], dtype=np.float32)
        maxs = np.array([float(r[2]) for r in rows], dtype=np.float32)
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed scaler file: {exc}") from exc
    return ScalerParams(mins, maxs)


def split_by_fraction(seqs, fractions):
    """Assign whole sequences, in order, to consecutive splits.

    Cut points are chosen greedily so cumulative sample counts land as close
    as possible to the requested fractions while every split stays non-empty.
    """
    if isinstance(seqs, LabeledSequence):
        seqs = [seqs]
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    k = len(fractions)
    if len(seqs) < k:
        raise DataError(f"{len(seqs)} sequences cannot fill {k} splits")
    cum = np.concatenate([[0], np.cumsum([len(s) for s in seqs])]).astype(float)
    total = cum[-1]
    cuts = [0]
    target = 0.0
    for split in range(k - 1):
        target += fractions[split] * total
        lo = cuts[-1] + 1
        hi = len(seqs) - (k - 1 - split)
        candidates = np.arange(lo, hi + 1)
        cuts.append(int(candidates[np.argmin(np.abs(cum[candidates] - target))]))
    cuts.append(len(seqs))
    return [list(seqs[a:b]) for a, b in zip(cuts[:-1], cuts[1:])]


@dataclass
class SynthSpec:
    """Piecewise-constant activity process imprinted on sinusoidal channel signatures."""

    class_count: int = 3
    channels: int = 6
    min_duration: int = 40
    max_duration: int = 200
    offset_range: float = 1.0
    amplitude_range: tuple = (0.2, 0.8)
    frequency_range: tuple = (0.01, 0.1)
    noise_std: float = 0.3
    train_length: int = 20000
    test_length: int = 5000
    validation_length: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("need 1 <= min_duration <= max_duration")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if min(self.train_length, self.test_length, self.validation_length) < 1:
            raise ValueError("split lengths must be >= 1")


@dataclass
class ClassSignatures:
    """Per-(class, channel) offset, amplitude, frequency (cycles/step) and phase."""

    offset: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray

    def clean_signal(self, labels):
        t = np.arange(len(labels))
        k = np.asarray(labels)
        arg = 2 * np.pi * self.frequency[k].T * t + self.phase[k].T
        return self.offset[k].T + self.amplitude[k].T * np.sin(arg)


def class_signatures(spec):
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(4)[0])
    shape = (spec.class_count, spec.channels)
    return ClassSignatures(
        offset=rng.uniform(-spec.offset_range, spec.offset_range, shape),
        amplitude=rng.uniform(*spec.amplitude_range, shape),
        frequency=rng.uniform(*spec.frequency_range, shape),
        phase=rng.uniform(0, 2 * np.pi, shape),
    )


def synth_labels(spec, length, rng):
    """Segment process: uniform class per segment, uniform integer durations."""
    labels = np.empty(length, dtype=np.int64)
    pos = 0
    while pos < length:
        duration = int(rng.integers(spec.min_duration, spec.max_duration + 1))
        labels[pos:pos + duration] = rng.integers(spec.class_count)
        pos += duration
    return labels


def synth_generate(spec):
    """Return ``(train, test, validation)`` sequences drawn independently."""
    sig = class_signatures(spec)
    streams = np.random.SeedSequence(spec.seed).spawn(4)[1:]
    names = [f"ch{c}" for c in range(spec.channels)]
    out = []
    for length, stream in zip((spec.train_length, spec.test_length, spec.validation_length),
                              streams):
        rng = np.random.default_rng(stream)
        labels = synth_labels(spec, length, rng)
        x = sig.clean_signal(labels)
        if spec.noise_std > 0:
            x = x + rng.normal(0.0, spec.noise_std, x.shape)
        out.append(LabeledSequence(x.astype(np.float32), labels, list(names)))
    return tuple(out)
