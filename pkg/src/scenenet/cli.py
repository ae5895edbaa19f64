"""Command-line entry point: ``scenenet <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import frontend
from .aggregation import STRATEGIES, class_accuracy, evaluate
from .config import DatasetManifest, RunConfig
from .convnet import write_activation_export
from .errors import ConfigurationError, SceneNetError
from .mwfd import expand_windows, standardize_all
from .pipeline import ClipData, load_clips, predict_clip, preprocess_row, train_fold_models
from .training import checkpoint, restore, stack_examples

log = logging.getLogger("scenenet")


def _fail(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _load(args) -> tuple[RunConfig, Optional[DatasetManifest]]:
    config = RunConfig.load(args.config)
    manifest = None
    if getattr(args, "manifest", None):
        manifest = DatasetManifest.load(args.manifest, set(config.scenes))
    return config, manifest


def _write_report(path: Path, config: RunConfig, header: Sequence[str], rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {config.echo()}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _preprocess_one(job):
    row, cache_root = job
    try:
        windows, computed = preprocess_row(row, cache_root)
        return row.clip_id, len(windows), computed, None
    except (OSError, SceneNetError) as exc:
        return row.clip_id, 0, False, f"{row.path}: {exc}"


def cmd_preprocess(args) -> int:
    config, manifest = _load(args)
    jobs = [(row, config.cache_root) for row in manifest.rows]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_preprocess_one, jobs))
    else:
        results = [_preprocess_one(j) for j in jobs]
    failures = [r[3] for r in results if r[3]]
    for msg in failures:
        _fail(msg)
    windows = sum(r[1] for r in results)
    computed = sum(1 for r in results if r[2])
    print(f"clips={len(results) - len(failures)} windows={windows} computed={computed} "
          f"skipped={len(results) - len(failures) - computed} failed={len(failures)}")
    return 1 if failures else 0


def _clips_for(manifest: DatasetManifest, config: RunConfig, rows=None) -> list[ClipData]:
    rows = manifest.rows if rows is None else rows
    sub = DatasetManifest(list(rows), manifest.source, manifest.folds)
    return load_clips(sub, config.cache_root)


def checkpoint_paths(config: RunConfig, fold: str, repeat: int) -> tuple[Path, Path, Path]:
    base = Path(config.checkpoint_dir) / f"fold{fold}_rep{repeat}"
    return base.with_suffix(".scnm"), Path(f"{base}_history.csv"), Path(f"{base}_timing.log")


def cmd_train(args) -> int:
    config, manifest = _load(args)
    folds = manifest.folds if args.fold == "all" else [args.fold]
    status = 0
    for fold in folds:
        if fold not in manifest.folds:
            raise ConfigurationError(f"fold {fold!r} is not in the manifest (folds: {', '.join(manifest.folds)})")
        train_clips = _clips_for(manifest, config, manifest.training_rows(fold))
        try:
            models, histories = train_fold_models(train_clips, config, manifest.folds.index(fold))
        except SceneNetError as exc:
            _fail(f"fold {fold}: {exc}")
            status = 1
            continue
        Path(config.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        for r, ((net, stats), history) in enumerate(zip(models, histories)):
            ck, hist, timing = checkpoint_paths(config, fold, r)
            checkpoint(net, stats, ck)
            history.write_csv(hist, comment=config.echo())
            history.write_timing_log(timing)
            print(f"fold={fold} repeat={r} epochs={len(history.epochs)} best_epoch={history.best_epoch} "
                  f"checkpoint={ck}")
    return status


def _load_fold_models(config: RunConfig, fold: str):
    models = []
    for r in range(config.repeats):
        ck = checkpoint_paths(config, fold, r)[0]
        if not ck.exists():
            raise ConfigurationError(f"missing checkpoint for fold {fold} repeat {r}: {ck}")
        net, stats = restore(ck)
        if stats is None:
            raise ConfigurationError(f"checkpoint {ck} carries no standardisation statistics")
        models.append((net, stats))
    return models


def cmd_evaluate(args) -> int:
    config, manifest = _load(args)
    if args.strategy:
        config = replace(config, aggregation=args.strategy)
    report_dir = Path(args.report_dir or config.report_dir)
    classes = config.classes
    fold_rows, confusion = [], None
    accuracies = []
    for fold in manifest.folds:
        models = _load_fold_models(config, fold)
        test = _clips_for(manifest, config, manifest.fold_rows(fold))
        predictions = [predict_clip(models, clip, config) for clip in test]
        result = evaluate(predictions, classes)
        accuracies.append(result.accuracy)
        fold_rows.append([fold, repr(result.accuracy)])
        confusion = result.confusion if confusion is None else confusion + result.confusion
    tag = config.aggregation
    per_class = class_accuracy(confusion)
    _write_report(report_dir / f"folds_{tag}.csv", config, ["fold", "accuracy"], fold_rows)
    _write_report(report_dir / f"classwise_{tag}.csv", config, ["scene", "accuracy"],
                  [[c, repr(per_class[c])] for c in classes])
    _write_report(report_dir / f"confusion_{tag}.csv", config, ["true\\predicted", *classes],
                  [[c, *map(int, confusion.counts[i])] for i, c in enumerate(classes)])
    mean_acc = float(np.mean(accuracies))
    print(f"mean_accuracy={mean_acc!r}")
    print(f"pooled_accuracy={confusion.accuracy!r}")
    return 0


def _audio_files(target: Path) -> list[Path]:
    if target.is_dir():
        return sorted(p for p in target.iterdir() if p.suffix.lower() == ".wav")
    return [target]


def cmd_predict(args) -> int:
    config = RunConfig.load(args.config)
    models = []
    for ck in args.checkpoint:
        net, stats = restore(ck)
        if stats is None:
            raise ConfigurationError(f"checkpoint {ck} carries no standardisation statistics")
        models.append((net, stats))
    classes = models[0][0].classes or config.classes
    status = 0
    out_fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        out = csv.writer(out_fh, lineterminator="\n")
        out.writerow(["clip", "predicted", *classes])
        for path in _audio_files(Path(args.audio)):
            try:
                windows = frontend.clip_windows(path, clip_id=path.name)
            except (OSError, SceneNetError) as exc:
                _fail(f"{path}: {exc}")
                status = 1
                continue
            pred = predict_clip(models, ClipData(path.name, None, None, windows), config)
            out.writerow([path.name, classes[pred.predicted_label], *(f"{p:.9g}" for p in pred.probs)])
    finally:
        if args.output:
            out_fh.close()
    return status


def cmd_export_activations(args) -> int:
    config, manifest = _load(args)
    net, stats = restore(args.checkpoint)
    if stats is None:
        raise ConfigurationError(f"checkpoint {args.checkpoint} carries no standardisation statistics")
    block = args.block if args.block == "softmax" else int(args.block)
    if block != "softmax" and block not in net.block_end_layers():
        raise ConfigurationError(f"block must be 1..{len(net.arch.block_filters)} or softmax, got {args.block}")
    clips = _clips_for(manifest, config)
    examples = expand_windows((w for c in clips for w in c.windows), config.augmentation, config.delta_widths)
    if not 0.0 < args.fraction <= 1.0:
        raise ConfigurationError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(config.seed)
    n_keep = max(1, int(round(args.fraction * len(examples))))
    chosen = np.sort(rng.choice(len(examples), size=n_keep, replace=False))
    subset = standardize_all([examples[i] for i in chosen], stats)
    acts = net.export_activations(stack_examples(subset), block)
    index = [(ex.clip_id, ex.window_index, ex.variant, ex.scene_label or "") for ex in subset]
    write_activation_export(args.output, acts, index)
    print(f"rows={acts.shape[0]} columns={acts.shape[1]} output={args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenenet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="path<TAB>scene<TAB>fold file")
        p.add_argument("--config", help="key=value run configuration")

    p = sub.add_parser("preprocess", help="compute and cache log-mel windows")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the seeded repeats of one fold")
    common(p)
    p.add_argument("--fold", required=True, help="held-out fold id, or 'all'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score every fold with its checkpoints")
    common(p)
    p.add_argument("--strategy", choices=STRATEGIES, help="override the configured aggregation")
    p.add_argument("--report-dir", help="override report_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify WAV files")
    common(p, manifest=False)
    p.add_argument("audio", help="a WAV file or a directory of WAV files")
    p.add_argument("--checkpoint", nargs="+", required=True, help="one or more SCNM checkpoints (ensembled)")
    p.add_argument("--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-activations", help="dump per-channel maxima of a block for embedding tools")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--block", required=True, help="1-4 or softmax")
    p.add_argument("--fraction", type=float, default=0.2, help="random share of examples to export")
    p.add_argument("--output", required=True, help="SCNA output path (index written next to it as .tsv)")
    p.set_defaults(func=cmd_export_activations)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, SceneNetError) as exc:
        _fail(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
