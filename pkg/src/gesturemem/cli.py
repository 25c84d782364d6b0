"""Command-line entry points tying the toolkit together.

Subcommands: generate, train, eval, ablate, compare-losses, infer, serve,
export-addressing. Every subcommand accepts ``--config <file>`` (flat
``key = value`` text) plus repeated ``--set key=value`` overrides. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import evaluation, inference, training
from .config import apply_overrides, dataclass_from_mapping, read_kv_file
from .dataset import SplitSpec, SynthesisConfig, load_recordings, synthesize_gestures
from .errors import ConfigError, ToolkitError
from .evaluation import (compare_losses, evaluate, export_addressing,
                         format_ablation_table, format_loss_table, run_ablation)
from .inference import FrozenModel
from .training import TrainConfig

log = logging.getLogger(__name__)

SPLIT_KEYS = ("train_subjects", "test_subjects", "train_fraction")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_mapping(args):
    mapping = read_kv_file(args.config) if args.config else {}
    return apply_overrides(mapping, args.set)


def _resolve_split(mapping, recordings):
    """Subject split from explicit lists or a deterministic sorted-prefix fraction."""
    subjects = sorted({r.subject_id for r in recordings})
    train = mapping.get("train_subjects")
    test = mapping.get("test_subjects")
    if train or test:
        if not (train and test):
            raise ConfigError("train_subjects and test_subjects must be set together")
        as_list = lambda v: [s.strip() for s in v.split(",") if s.strip()]
        return SplitSpec.from_lists(as_list(train), as_list(test))
    fraction = mapping.get("train_fraction")
    if fraction is None:
        raise ConfigError("config must set train_subjects/test_subjects "
                          "or train_fraction")
    fraction = float(fraction)
    if not 0 < fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {fraction}")
    n_train = min(max(int(round(fraction * len(subjects))), 1), len(subjects) - 1)
    return SplitSpec.from_lists(subjects[:n_train], subjects[n_train:])


def _train_config(mapping):
    return dataclass_from_mapping(TrainConfig, mapping, extra_keys=SPLIT_KEYS)


def _eval_windows(model, recordings, label_map, subjects=None, stride=None):
    from .dataset import window_dataset

    stride = stride or model.short_len
    sample_set = window_dataset(recordings, label_map, model.short_len,
                                stride=stride, with_long=False)
    if subjects:
        keep = set(subjects)
        return [s for s, subj in zip(sample_set.shorts, sample_set.subjects)
                if subj in keep]
    return sample_set.shorts


def cmd_generate(args):
    mapping = _load_mapping(args)
    seed = int(mapping.pop("seed", 0))
    cfg = dataclass_from_mapping(SynthesisConfig, mapping)
    path = synthesize_gestures(cfg, seed, args.out)
    print(f"wrote {path}")
    return 0


def cmd_train(args):
    mapping = _load_mapping(args)
    recordings, label_map = load_recordings(args.data)
    split = _resolve_split(mapping, recordings)
    config = _train_config(mapping)
    result = training.train(config, recordings, label_map, split,
                            log_path=args.log, resume_from=args.resume)
    if args.out:
        training.save_checkpoint(result.state, args.out)
        print(f"checkpoint: {args.out}")
    test_rows = [m for m in result.metrics if m["split"] == "test"]
    if test_rows:
        print(f"final test accuracy: {test_rows[-1]['accuracy']:.4f}")
    return 0


def cmd_eval(args):
    model = FrozenModel.from_checkpoint(args.model)
    recordings, label_map = load_recordings(args.data)
    subjects = args.subjects.split(",") if args.subjects else None
    samples = _eval_windows(model, recordings, label_map, subjects, args.stride)
    result = evaluate(model, samples)
    print(f"accuracy: {result.accuracy:.4f} over {len(samples)} windows")
    for i, recall in enumerate(result.per_class_recall):
        shown = "undefined" if recall is None else f"{recall:.4f}"
        print(f"recall[{label_map.name(i)}]: {shown}")
    if args.confusion_out:
        import csv as _csv

        with open(args.confusion_out, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["true\\pred"] + list(label_map.names))
            for i, row in enumerate(result.confusion.counts):
                writer.writerow([label_map.name(i)] + [int(v) for v in row])
        print(f"confusion matrix: {args.confusion_out}")
    return 0


def _parse_seeds(text):
    return [int(s) for s in text.split(",") if s.strip()] if text else None


def cmd_ablate(args):
    mapping = _load_mapping(args)
    recordings, label_map = load_recordings(args.data)
    split = _resolve_split(mapping, recordings)
    config = _train_config(mapping)
    result = run_ablation(config, recordings, label_map, split,
                          seeds=_parse_seeds(args.seeds))
    print(format_ablation_table(result))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump({k: v for k, v in result.items()}, fh, indent=2, sort_keys=True)
    return 0


def cmd_compare_losses(args):
    mapping = _load_mapping(args)
    recordings, label_map = load_recordings(args.data)
    split = _resolve_split(mapping, recordings)
    config = _train_config(mapping)
    result = compare_losses(config, recordings, label_map, split,
                            seeds=_parse_seeds(args.seeds))
    print(format_loss_table(result))
    return 0


def cmd_infer(args):
    model = FrozenModel.from_checkpoint(args.model)
    recordings, label_map = load_recordings(args.data)
    samples = _eval_windows(model, recordings, label_map, stride=args.stride)
    correct = 0
    for s in samples:
        cls, probs = inference.predict(model, s.data)
        correct += int(cls == s.label)
        print(json.dumps({"recording": s.recording_id, "start_frame": s.start_frame,
                          "true": s.label, "class": cls,
                          "name": model.label_names[cls]}))
    if samples:
        log.info("accuracy %.4f over %d windows", correct / len(samples), len(samples))
    return 0


def cmd_serve(args):
    model = FrozenModel.from_checkpoint(args.model)
    if args.port is not None:
        inference.serve_tcp(model, args.host, args.port,
                            stride_ms=args.stride_ms, frame_hz=args.frame_hz)
    else:
        inference.serve_stream(model, sys.stdin, sys.stdout,
                               stride_ms=args.stride_ms, frame_hz=args.frame_hz)
    return 0


def cmd_export_addressing(args):
    model = FrozenModel.from_checkpoint(args.model)
    recordings, label_map = load_recordings(args.data)
    subjects = args.subjects.split(",") if args.subjects else None
    samples = _eval_windows(model, recordings, label_map, subjects)
    stats = export_addressing(model, samples, args.n_slots, args.n_samples,
                              args.seed, args.out)
    print(f"wrote {stats['csv_path']}")
    print(f"same-class mean address mass: {stats['same_class_mean']:.6f}")
    print(f"diff-class mean address mass: {stats['diff_class_mean']:.6f}")
    return 0


def build_parser():
    parser = _Parser(prog="gesturemem",
                     description="Memory-augmented in-place gesture classification")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override a config key (repeatable)")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "synthesize a labeled gesture dataset")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("train", cmd_train, "train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--log", help="metrics JSONL output path")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subjects", help="comma-separated subject filter")
    p.add_argument("--stride", type=int, help="window stride (default: window length)")
    p.add_argument("--confusion-out", help="write the confusion matrix as CSV")

    p = add("ablate", cmd_ablate, "run the four-cell recall/loss ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--json-out", help="write raw results as JSON")

    p = add("compare-losses", cmd_compare_losses,
            "train with the memory loss vs. the in-batch views loss")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", help="comma-separated seeds")

    p = add("infer", cmd_infer, "batch-predict windows of a dataset as NDJSON")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stride", type=int)

    p = add("serve", cmd_serve, "stream NDJSON frames to predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--stdin", action="store_true",
                   help="serve a single session over stdin/stdout (default)")
    p.add_argument("--port", type=int, help="serve NDJSON sessions over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--stride-ms", type=float, default=180.0)
    p.add_argument("--frame-hz", type=float, default=30.0)

    p = add("export-addressing", cmd_export_addressing,
            "export an addressing submatrix for plotting")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subjects", help="comma-separated subject filter")
    p.add_argument("--n-slots", type=int, default=32)
    p.add_argument("--n-samples", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ToolkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
