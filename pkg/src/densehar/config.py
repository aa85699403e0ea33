"""Flat ``key = value`` run configuration with dotted keys.

Lines starting with ``#`` are comments. Every key has a default, so an empty
file (or no file) gives the reference setup: six conv blocks of 32 3x3
filters with 1x4 pooling, batch 10, learning rate 1e-2 dropping to 1e-3
after 100 iterations, 150 iterations, training subsequences of 60, test
tiles of 100 with 50% overlap, window 24.
"""

from pathlib import Path

from .data import SynthSpec
from .errors import ConfigError
from .model import INIT_SCHEMES, ArchConfig
from .train import TrainConfig


def _optional_int(text):
    return None if text.strip().lower() in ("auto", "none", "") else int(text)


DEFAULTS = {
    "seed": (int, 0),
    "arch.blockCount": (int, 6),
    "arch.filters": (int, 32),
    "arch.convRows": (int, 3),
    "arch.convSteps": (int, 3),
    "arch.poolWidth": (int, 4),
    "arch.dropoutRate": (float, 0.5),
    "arch.init": (str, "he"),
    "train.subseqLen": (int, 60),
    "train.batchSize": (int, 10),
    "train.lrInitial": (float, 1e-2),
    "train.lrReduced": (float, 1e-3),
    "train.lrDropAt": (int, 100),
    "train.stopAt": (int, 150),
    "train.batchesPerIteration": (_optional_int, None),
    "train.momentum": (float, 0.0),
    "infer.subseqLen": (int, 100),
    "infer.overlap": (float, 0.5),
    "bench.window": (int, 24),
    "bench.stride": (int, 1),
}

SYNTH_KEYS = {
    "classCount": ("class_count", int),
    "channels": ("channels", int),
    "minDuration": ("min_duration", int),
    "maxDuration": ("max_duration", int),
    "offsetRange": ("offset_range", float),
    "noiseStd": ("noise_std", float),
    "trainLength": ("train_length", int),
    "testLength": ("test_length", int),
    "validationLength": ("validation_length", int),
    "seed": ("seed", int),
}


def parse_pairs(text, source="<config>"):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        pairs[key] = value
    return pairs


def _convert(key, value, converter):
    try:
        return converter(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


def resolve(pairs):
    """Merge raw string pairs over the defaults, rejecting unknown keys."""
    unknown = sorted(set(pairs) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    resolved = {key: default for key, (_, default) in DEFAULTS.items()}
    for key, value in pairs.items():
        resolved[key] = _convert(key, value, DEFAULTS[key][0])
    if resolved["arch.init"] not in INIT_SCHEMES:
        raise ConfigError(f"arch.init must be one of {INIT_SCHEMES}")
    return resolved


def load_config(path=None, overrides=None):
    pairs = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs.update(parse_pairs(text, str(path)))
    pairs.update(overrides or {})
    return resolve(pairs)


def dump_config(resolved):
    lines = []
    for key in DEFAULTS:
        value = resolved[key]
        lines.append(f"{key} = {'auto' if value is None else value}")
    return "\n".join(lines) + "\n"


def arch_config(resolved, input_rows, class_count):
    try:
        return ArchConfig(
            input_rows=input_rows,
            class_count=class_count,
            block_count=resolved["arch.blockCount"],
            conv_kernel=(resolved["arch.convRows"], resolved["arch.convSteps"]),
            filters=resolved["arch.filters"],
            pool_width=resolved["arch.poolWidth"],
            dropout_rate=resolved["arch.dropoutRate"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid architecture: {exc}") from None


def train_config(resolved):
    try:
        return TrainConfig(
            subseq_len=resolved["train.subseqLen"],
            batch_size=resolved["train.batchSize"],
            lr_initial=resolved["train.lrInitial"],
            lr_reduced=resolved["train.lrReduced"],
            lr_drop_at=resolved["train.lrDropAt"],
            stop_at=resolved["train.stopAt"],
            batches_per_iteration=resolved["train.batchesPerIteration"],
            momentum=resolved["train.momentum"],
            seed=resolved["seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid training config: {exc}") from None


def load_synth_spec(path=None):
    if path is None:
        return SynthSpec()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read synth spec {path}: {exc}") from None
    pairs = parse_pairs(text, str(path))
    unknown = sorted(set(pairs) - set(SYNTH_KEYS))
    if unknown:
        raise ConfigError(f"unknown synth spec keys: {', '.join(unknown)}")
    kwargs = {SYNTH_KEYS[k][0]: _convert(k, v, SYNTH_KEYS[k][1]) for k, v in pairs.items()}
    try:
        return SynthSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from None
