"""Command-line entry point: ``fdkdnn <subcommand> [flags]``.

Subcommands run one pipeline stage each::

    synth -> build-manifest -> split -> embed -> train -> evaluate / predict

``--config FILE`` reads ``key=value`` lines (keys spelled like the long
flags, e.g. ``ratio=0.8`` or ``decoder-cmd=...``); explicit flags win.
Exit status is 0 on success, 1 on a pipeline error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from ._io import atomic_write_text
from .data.dataset import Split, assign_all, build_manifest, load_manifest, save_manifest, split_dataset
from .data.frames import DEFAULT_DECODER_CMD, extract_frames
from .data.images import load_input
from .data.synth import FIXTURE_TAXONOMY, SynthSpec, synth_dataset
from .errors import FdkError
from .evaluate import ReportFormat, evaluate, predict, render_report
from .graph.executor import attach_head, backbone_fingerprint, detach_head, load_model, save_model
from .graph.tiny_inception import bundled_manifest_path
from .head.cache import EmbeddingCache, check_cache, compute_embeddings
from .head.train import TrainConfig, train

log = logging.getLogger("fdkdnn")

DEFAULT_SEED = 42
CLASSIFIER_NAME = "classifier.json"
HISTORY_NAME = "history.jsonl"


class UsageError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"missing required flag(s): {', '.join(missing)}")


def _model_path(args) -> Path:
    return Path(args.model) if args.model else bundled_manifest_path()


def cmd_synth(args) -> int:
    _require(args, "out")
    names = args.class_names.split(",") if args.class_names else None
    if names is None and args.classes == len(FIXTURE_TAXONOMY):
        names = list(FIXTURE_TAXONOMY)
    spec = SynthSpec(args.classes, args.per_class, (args.size, args.size), args.seed,
                     class_names=tuple(names) if names else None)
    m = synth_dataset(spec, args.out)
    if args.manifest:
        save_manifest(m, args.manifest)
    print(f"wrote {len(m.records)} images in {len(m.classes)} classes to {args.out}")
    return 0


def cmd_extract_frames(args) -> int:
    _require(args, "data", "out")
    n = extract_frames(args.data, args.out, args.decoder_cmd or DEFAULT_DECODER_CMD)
    print(f"extracted {n} frames to {args.out}")
    return 0


def cmd_build_manifest(args) -> int:
    _require(args, "data", "manifest")
    m = build_manifest(args.data)
    if args.external:
        m = assign_all(m, Split.TEST)
    save_manifest(m, args.manifest)
    print(f"{len(m.classes)} classes, {len(m.records)} records -> {args.manifest}")
    return 0


def cmd_split(args) -> int:
    _require(args, "manifest")
    m = split_dataset(load_manifest(args.manifest), args.ratio, args.seed)
    save_manifest(m, args.out or args.manifest)
    counts = m.counts()
    width = max(len(c) for c in m.classes)
    print(f"{'class'.ljust(width)}  train  validation")
    for cls in m.classes:
        print(f"{cls.ljust(width)}  {counts[cls][Split.TRAIN]:>5}  {counts[cls][Split.VALIDATION]:>10}")
    return 0


def cmd_embed(args) -> int:
    _require(args, "manifest", "cache")
    g = load_model(_model_path(args))
    cache = EmbeddingCache.load(args.cache) if Path(args.cache).exists() else None
    run = compute_embeddings(g, load_manifest(args.manifest), cache=cache, threads=args.threads)
    run.cache.save(args.cache)
    print(f"embeddings computed: {run.computed}, reused: {run.reused}, cache size: {len(run.cache)}")
    return 0


def cmd_train(args) -> int:
    _require(args, "manifest", "cache", "out")
    g = load_model(_model_path(args))
    cache = EmbeddingCache.load(args.cache)
    check_cache(cache, g)
    m = load_manifest(args.manifest)
    config = TrainConfig(
        learning_rate=args.lr, steps=args.steps, batch_size=args.batch, momentum=args.momentum,
        seed=args.seed, eval_every=args.eval_every, dropout=args.dropout,
    )
    start = time.perf_counter()
    head, history = train(cache, m, config, fingerprint=backbone_fingerprint(g))
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    classifier = attach_head(g, head)
    atomic_write_text(out / HISTORY_NAME, history.dumps())
    save_model(classifier, out / CLASSIFIER_NAME)
    final, best = history.final_validation_accuracy, history.best
    print(f"final validation accuracy: {'n/a' if final is None else f'{100 * final:.1f}%'}")
    if best is not None:
        print(f"best validation accuracy: {100 * best.validation_accuracy:.1f}% (step {best.step})")
    print(f"training wall-clock: {elapsed:.2f}s for {config.steps} steps")
    print(f"classifier written to {out / CLASSIFIER_NAME}")
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "model", "manifest", "cache")
    g = load_model(args.model)
    cache = EmbeddingCache.load(args.cache)
    check_cache(cache, g)
    report = evaluate(detach_head(g), cache, load_manifest(args.manifest), Split(args.split.upper()))
    fmt = ReportFormat(args.format.upper())
    if args.out:
        atomic_write_text(args.out, render_report(report, ReportFormat.STRUCTURED))
    sys.stdout.write(render_report(report, fmt))
    return 0


def cmd_predict(args) -> int:
    _require(args, "model", "data")
    g = load_model(args.model)
    idx, probs = predict(g, load_input(args.data, g.manifest))
    names = g.class_names or tuple(f"class_{k}" for k in range(len(probs)))
    ranked = sorted(range(len(probs)), key=lambda k: (-float(probs[k]), k))[: args.top_k]
    for k in ranked:
        print(f"{names[k]}\t{100 * float(probs[k]):.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file supplying flag defaults")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)

    parser = argparse.ArgumentParser(prog="fdkdnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic PPM corpus")
    p.add_argument("--out")
    p.add_argument("--manifest", help="also write the unsplit dataset manifest here")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--class-names", help="comma-separated class names")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-frames", parents=[common], help="split a video into frames")
    p.add_argument("--data", help="input video")
    p.add_argument("--out", help="frame directory")
    p.add_argument("--decoder-cmd", help=f"command template (default: {DEFAULT_DECODER_CMD!r})")
    p.set_defaults(func=cmd_extract_frames)

    p = sub.add_parser("build-manifest", parents=[common], help="scan <root>/<class>/<image>")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--manifest", help="output manifest")
    p.add_argument("--external", action="store_true", help="mark every record TEST")
    p.set_defaults(func=cmd_build_manifest)

    p = sub.add_parser("split", parents=[common], help="stratified train/validation split")
    p.add_argument("--manifest")
    p.add_argument("--out", help="write here instead of updating --manifest")
    p.add_argument("--ratio", type=float, default=0.8)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("embed", parents=[common], help="compute bottleneck embeddings")
    p.add_argument("--model", help="backbone manifest (default: bundled tiny-inception)")
    p.add_argument("--manifest")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="train the softmax head")
    p.add_argument("--model", help="backbone manifest (default: bundled tiny-inception)")
    p.add_argument("--manifest")
    p.add_argument("--cache")
    p.add_argument("--out", help="output directory for the classifier bundle and history")
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--steps", type=int, default=TrainConfig.steps)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    p.add_argument("--eval-every", type=int, default=TrainConfig.eval_every)
    p.add_argument("--dropout", type=float, default=TrainConfig.dropout)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a classifier bundle")
    p.add_argument("--model", help="classifier manifest written by train")
    p.add_argument("--manifest")
    p.add_argument("--cache")
    p.add_argument("--split", default="validation", choices=["validation", "test"])
    p.add_argument("--format", default="text", choices=["text", "structured"])
    p.add_argument("--out", help="write the structured report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="classify one image")
    p.add_argument("--model", help="classifier manifest written by train")
    p.add_argument("--data", help="image file")
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(func=cmd_predict)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (UsageError, OSError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"fdkdnn: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.verbose:
        effective = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
        print("effective config: " + " ".join(f"{k}={v}" for k, v in effective.items()), file=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser._subparsers._group_actions[0].choices[args.command].print_usage(sys.stderr)
        print(f"fdkdnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FdkError, OSError, ValueError) as exc:
        print(f"fdkdnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
