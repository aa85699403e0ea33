"""Command-line entry point: ``densehar {synth,train,predict,eval,bench}``.

Exit codes: 0 success, 1 configuration error, 2 data error (missing or
malformed files, dimension or length mismatches), 3 numeric abort during
training. Diagnostics go to stderr, summaries to stdout.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from . import config as cfgmod
from . import data as ds
from . import infer
from . import metrics
from . import model as fcn
from . import train as trainmod
from .errors import ConfigError, DataError, LabelError, ModelFormatError, NumericError, ShapeError

log = logging.getLogger("densehar")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def sidecar(model_path, suffix):
    """``model.fcn`` -> ``model<suffix>``."""
    p = Path(model_path)
    return p.with_name(p.stem + suffix)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_schema(path):
    return ds.read_schema(path) if path else None


def _load_sequence(path, schema):
    if schema is None:
        return ds.load_csv(path)
    return ds.load_csv(path, has_header=schema.has_header, delimiter=schema.delimiter)


def _load_model_and_scaler(model_path):
    try:
        model = fcn.load_model(model_path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {model_path}") from None
    scaler_path = sidecar(model_path, ".scaler.csv")
    scaler = ds.read_scaler(scaler_path) if scaler_path.exists() else None
    return model, scaler


def _prepare(seq, model, scaler):
    if seq.channels != model.config.input_rows:
        raise ShapeError(f"data has {seq.channels} feature columns, model expects "
                         f"{model.config.input_rows}", axis="rows")
    if len(seq) and seq.labels.max() >= model.config.class_count:
        raise LabelError(f"data label {seq.labels.max()} is outside the model's "
                         f"{model.config.class_count} classes")
    if scaler is not None:
        if scaler.mins.size != seq.channels:
            raise ShapeError("scaler channel count does not match the data", axis="rows")
        seq = ds.apply_scaler(scaler, seq)
    return seq


def cmd_synth(args, resolved):
    spec = cfgmod.load_synth_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = ds.synth_generate(spec)
    for name, seq in zip(("train", "test", "validation"), splits):
        ds.write_csv(seq, out / f"{name}.csv")
    ds.write_schema(ds.DatasetSchema(spec.class_count, None, spec.channels), out / "schema.txt")
    print(f"wrote {', '.join(f'{n}={len(s)}' for n, s in zip(('train', 'test', 'validation'), splits))}"
          f" samples, {spec.channels} channels, {spec.class_count} classes to {out}")
    return EXIT_OK


def cmd_train(args, resolved):
    schema = _load_schema(args.schema)
    raw = [_load_sequence(p, schema) for p in args.data]
    channels = {s.channels for s in raw}
    if len(channels) != 1:
        raise DataError(f"training files disagree on feature count: {sorted(channels)}")
    max_label = max(int(s.labels.max()) for s in raw)
    class_count = schema.class_count if schema else max(2, max_label + 1)
    if max_label >= class_count:
        raise LabelError(f"label {max_label} outside declared classCount {class_count}")
    scaler = ds.fit_scaler(raw)
    dataset = [ds.apply_scaler(scaler, s) for s in raw]

    arch = cfgmod.arch_config(resolved, channels.pop(), class_count)
    tcfg = cfgmod.train_config(resolved)
    model = fcn.build_fcn(arch, init=resolved["arch.init"], rng=resolved["seed"])
    started = time.perf_counter()
    report = trainmod.train(model, dataset, tcfg)
    wall = time.perf_counter() - started

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fcn.save_model(report.final_model, out)
    ds.write_scaler(scaler, sidecar(out, ".scaler.csv"))
    with sidecar(out, ".loss.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "loss"])
        for i, loss in enumerate(report.loss_history, 1):
            writer.writerow([i, repr(float(loss))])
    manifest = {
        "package_version": __version__,
        "command": ["densehar", *sys.argv[1:]] if args.argv is None else args.argv,
        "config": {k: v for k, v in resolved.items()},
        "seed": resolved["seed"],
        "data": [{"path": str(p), "sha256": _sha256(p)} for p in args.data],
        "schema": None if args.schema is None else {"path": str(args.schema),
                                                    "sha256": _sha256(args.schema)},
        "batches_per_iteration": tcfg.batches_per_iteration
        or trainmod.default_batches_per_iteration(dataset, tcfg),
        "final_loss": report.loss_history[-1],
        "wall_seconds": wall,
    }
    sidecar(out, ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"trained {tcfg.stop_at} iterations in {wall:.1f}s, final loss "
          f"{report.loss_history[-1]:.4f}; model written to {out}")
    return EXIT_OK


def cmd_predict(args, resolved):
    model, scaler = _load_model_and_scaler(args.model)
    seq = _prepare(_load_sequence(args.data, None), model, scaler)
    subseq = args.subseq_len or resolved["infer.subseqLen"]
    overlap = resolved["infer.overlap"] if args.overlap is None else args.overlap
    plan = infer.plan_tiles(len(seq), subseq, overlap)
    probs, labels = infer.dense_predict(model, seq, plan)
    infer.write_predictions(args.out, probs, labels)
    print(f"L={len(seq)} N={model.config.class_count} tiles={len(plan.starts)} "
          f"tile_len={plan.tile_len}; predictions written to {args.out}")
    return EXIT_OK


def cmd_eval(args, resolved):
    schema = _load_schema(args.schema)
    gt = _load_sequence(args.gt, schema).labels
    pred = infer.read_prediction_labels(args.pred)
    if gt.size != pred.size:
        raise ShapeError(f"ground truth has {gt.size} samples, predictions have {pred.size}",
                         axis="steps")
    class_count = schema.class_count if schema else None
    null = schema.null_class if schema else None
    cls = metrics.classification_report(gt, pred, class_count, null)
    mis = metrics.misalignment(gt, pred, null)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = metrics.format_report(cls, mis)
    (out / "report.txt").write_text(text)
    metrics.write_metrics_csv(out / "metrics.csv", metrics.report_rows(cls, mis))
    metrics.write_confusion_csv(out / "confusion.csv", cls.confusion)
    print(text, end="")
    return EXIT_OK


def cmd_bench(args, resolved):
    model, scaler = _load_model_and_scaler(args.model)
    seq = _prepare(_load_sequence(args.data, None), model, scaler)
    subseq = args.subseq_len or resolved["infer.subseqLen"]
    overlap = resolved["infer.overlap"] if args.overlap is None else args.overlap
    window = args.window or resolved["bench.window"]
    stride = args.stride or resolved["bench.stride"]
    lengths = [len(seq)] if args.lengths is None else [int(v) for v in args.lengths.split(",")]
    rows = []
    for length in lengths:
        if length > len(seq):
            raise DataError(f"requested length {length} exceeds the {len(seq)} samples in "
                            f"{args.data}")
        x = seq.features[:, :length]
        report = infer.benchmark(model, x, infer.plan_tiles(length, subseq, overlap), window,
                                 stride)
        rows.append(report)
        print(f"L={length:7d} dense {report.dense_seconds:8.3f}s ({report.dense_passes} passes)"
              f"  window {report.window_seconds:8.3f}s ({report.window_passes} passes)"
              f"  speedup {report.speedup:6.2f}x  agreement {report.predictions_agree_pct:6.2f}%")
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sequenceLen", "denseSeconds", "windowSeconds", "speedup",
                             "agreement", "densePasses", "windowPasses"])
            for r in rows:
                writer.writerow([r.sequence_len, repr(r.dense_seconds), repr(r.window_seconds),
                                 repr(r.speedup), repr(r.predictions_agree_pct), r.dense_passes,
                                 r.window_passes])
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="densehar", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, help="overrides the 'seed' configuration key")
    parser.add_argument("--threads", type=int, help="cap BLAS threads (bench always uses 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="key = value synthetic dataset spec")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", nargs="+", required=True, help="training CSV file(s)")
    p.add_argument("--schema", help="schema sidecar (classCount, nullClass, ...)")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="dense prediction for one sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="prediction CSV to write")
    p.add_argument("--subseq-len", type=int)
    p.add_argument("--overlap", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="dataset CSV with ground-truth labels")
    p.add_argument("--pred", required=True, help="prediction CSV from 'predict'")
    p.add_argument("--schema", help="schema sidecar declaring classCount and nullClass")
    p.add_argument("--out", required=True, help="output directory for the reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time dense prediction against window emulation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lengths", help="comma-separated prefix lengths to time")
    p.add_argument("--subseq-len", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", help="CSV report to write")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = None if argv is None else ["densehar", *argv]
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        resolved = cfgmod.load_config(args.config, overrides)
        threads = 1 if args.command == "bench" else args.threads
        limit = threadpool_limits(limits=threads) if threads else nullcontext()
        with limit:
            return args.func(args, resolved)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, LabelError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
