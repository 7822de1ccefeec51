"""Command-line entry points: synth, train, align, eval, bench.

Exit codes: 0 success, 1 usage/configuration error, 2 data error.
Hyperparameters come from a flat key=value config file (one pair per
line, '#' comments) overridden by repeated --set key=value flags; every
key defaults to the reference training protocol (see TrainConfig).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .. import cascade, model_io
from ..cascade import TrainConfig, TrainExample
from . import io as io_mod
from . import metrics, synth
from .bench import bench as run_bench


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value pairs, one per line; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise io_mod.DataFormatError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _coerce_dataclass(cls, mapping):
    """Build a dataclass from string values, handling numeric tuples."""
    kwargs = {}
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in mapping.items():
        if key not in by_name:
            raise UsageError(f"unknown config key {key!r}")
        default = by_name[key].default
        if isinstance(value, str):
            if isinstance(default, bool):
                value = value.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, tuple):
                value = tuple(float(v) for v in value.split(","))
        kwargs[key] = value
    return cls(**kwargs)


def _collect_settings(args) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        mapping.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _load_dataset(manifest_path):
    examples = io_mod.load_manifest(manifest_path)
    return examples, [ex.load_image() for ex in examples]


def _cmd_synth(args) -> int:
    mapping = _collect_settings(args)
    mapping.setdefault("count", args.count)
    config = _coerce_dataclass(synth.SynthConfig, mapping)
    examples = synth.synth_generate(config, args.seed, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    mapping = _collect_settings(args)
    if args.seed is not None:
        mapping["seed"] = args.seed
    config = _coerce_dataclass(TrainConfig, mapping)
    examples, images = _load_dataset(args.data)
    dataset = [
        TrainExample(img, ex.shape, ex.bbox) for ex, img in zip(examples, images)
    ]
    model = cascade.train_cascade(config, dataset)
    model_io.save_model(model, args.out)
    print(f"trained {len(model.stages)}-stage cascade -> {args.out}")
    return 0


def _parse_bbox(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--bbox expects x,y,w,h, got {text!r}")
    try:
        return tuple(float(v) for v in parts)
    except ValueError:
        raise UsageError(f"--bbox expects numbers, got {text!r}") from None


def _cmd_align(args) -> int:
    model = model_io.load_model(args.model)
    image = io_mod.load_gray(args.image)
    shape, _ = cascade.align(model, image, _parse_bbox(args.bbox))
    io_mod.save_pts(args.out, shape)
    print(f"aligned {model.n_points} landmarks -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = model_io.load_model(args.model)
    examples, images = _load_dataset(args.data)
    report = metrics.evaluate_model(model, examples, images=images, normalizer=args.normalizer)
    report.write_csv(args.out)
    print(f"mean NME {report.mean_nme:.4f} over {len(report.nmes)} images -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    model = model_io.load_model(args.model)
    examples, images = _load_dataset(args.data)
    report = run_bench(model, examples, repetitions=args.repetitions, images=images)
    report.write_csv(args.out)
    print(f"benchmarked {len(model.stages)} stages -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gnfalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a cascade on a dataset manifest")
    p.add_argument("--data", required=True, help="manifest.tsv path")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("align", help="align one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--bbox", required=True, help="x,y,w,h")
    p.add_argument("--out", required=True, help="output pts file")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV report")
    p.add_argument("--normalizer", choices=("bbox", "interpupil"), default="bbox")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="time the pipeline steps of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV report")
    p.add_argument("--repetitions", type=int, default=20)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gnfalign: error: {exc}", file=sys.stderr)
        return 1
    except (io_mod.DataFormatError, model_io.ModelFormatError) as exc:
        print(f"gnfalign: data error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"gnfalign: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
