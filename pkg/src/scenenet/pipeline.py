"""Fold-strict cross-validation built from the frontend, MWFD, training and aggregation stages."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import frontend
from .aggregation import ClipPrediction, ConfusionMatrix, EvalResult, WindowPosterior, aggregate, ensemble_average, evaluate
from .config import DatasetManifest, ManifestRow, RunConfig
from .convnet import Architecture, Network
from .errors import ManifestError
from .frontend import AnalysisWindow
from .mwfd import StandardizationStats, expand_windows, fit_standardizer, standardize_all
from .training import TrainHistory, stack_examples, train_fold

log = logging.getLogger(__name__)

FRONTEND_SIGNATURE = (
    f"sr={frontend.SAMPLE_RATE};frame={frontend.FRAME_SIZE};hop={frontend.FRAME_HOP};"
    f"mels={frontend.N_MELS};win={frontend.WINDOW_FRAMES};eps={frontend.LOG_EPS};"
    f"cache_v={frontend.WINDOW_CACHE_VERSION}"
)


@dataclass
class ClipData:
    clip_id: str
    scene: Optional[str]
    fold: Optional[str]
    windows: list[AnalysisWindow]


def cache_paths(cache_root: Path, clip_id: str) -> tuple[Path, Path]:
    digest = hashlib.sha1(clip_id.encode("utf-8")).hexdigest()[:16]
    stem = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in Path(clip_id).stem)[:40]
    base = cache_root / f"{stem}-{digest}.scnw"
    return base, base.with_name(base.name + ".key")


def cache_key(audio_path: Path, scene: Optional[str]) -> str:
    st = audio_path.stat()
    text = f"{audio_path.resolve()}|{st.st_size}|{st.st_mtime_ns}|{scene}|{FRONTEND_SIGNATURE}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def preprocess_row(row: ManifestRow, cache_root: Optional[Path]) -> tuple[list[AnalysisWindow], bool]:
    """Windows for one manifest row, reusing an up-to-date cache entry.

    Returns the windows and whether they had to be recomputed.
    """
    if cache_root is None:
        return frontend.clip_windows(row.path, row.clip_id, row.scene), True
    data_path, key_path = cache_paths(cache_root, row.clip_id)
    key = cache_key(row.path, row.scene)
    if data_path.exists() and key_path.exists() and key_path.read_text().strip() == key:
        return frontend.read_window_cache(data_path), False
    windows = frontend.clip_windows(row.path, row.clip_id, row.scene)
    cache_root.mkdir(parents=True, exist_ok=True)
    frontend.write_window_cache(data_path, windows)
    key_path.write_text(key + "\n")
    return windows, True


def load_clips(manifest: DatasetManifest, cache_root: Optional[Path] = None) -> list[ClipData]:
    clips = []
    for row in manifest.rows:
        windows, _ = preprocess_row(row, cache_root)
        clips.append(ClipData(row.clip_id, row.scene, row.fold, windows))
    return clips


def repeat_seed(seed: int, fold_index: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, fold_index, repeat]).generate_state(1)[0])


def fit_fold_features(train_clips: Sequence[ClipData], config: RunConfig):
    """Expand and standardise training clips; statistics come from these clips only."""
    examples = expand_windows((w for c in train_clips for w in c.windows), config.augmentation, config.delta_widths)
    stats = fit_standardizer(examples)
    return standardize_all(examples, stats), stats


def window_posteriors(net: Network, stats: StandardizationStats, windows: Sequence[AnalysisWindow],
                      config: RunConfig) -> list[WindowPosterior]:
    examples = standardize_all(expand_windows(windows, config.augmentation, config.delta_widths), stats)
    if not examples:
        return []
    probs = net.predict(stack_examples(examples))
    return [WindowPosterior(p.astype(np.float64), ex.clip_id, ex.window_index, ex.variant)
            for p, ex in zip(probs, examples)]


def predict_clip(models: Sequence[tuple[Network, StandardizationStats]], clip: ClipData,
                 config: RunConfig, strategy: Optional[str] = None) -> ClipPrediction:
    """Aggregate each model's window posteriors, then ensemble across models."""
    strategy = strategy or config.aggregation
    per_model = [
        aggregate(window_posteriors(net, stats, clip.windows, config), strategy, clip.scene, config.renormalize_s2)
        for net, stats in models
    ]
    return per_model[0] if len(per_model) == 1 else ensemble_average(per_model)


@dataclass
class FoldResult:
    fold: str
    result: EvalResult
    predictions: list[ClipPrediction]
    models: list[tuple[Network, StandardizationStats]] = field(default_factory=list)
    histories: list[TrainHistory] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.result.accuracy


@dataclass
class CVResult:
    folds: list[FoldResult]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def confusion(self) -> ConfusionMatrix:
        total = self.folds[0].result.confusion
        for f in self.folds[1:]:
            total = total + f.result.confusion
        return total


def train_fold_models(train_clips: Sequence[ClipData], config: RunConfig, fold_index: int,
                      arch: Optional[Architecture] = None):
    """Train ``config.repeats`` seeded networks on the training clips of one fold."""
    examples, stats = fit_fold_features(train_clips, config)
    models, histories = [], []
    for r in range(config.repeats):
        net, history = train_fold(config.train, examples, config.classes,
                                  seed=repeat_seed(config.seed, fold_index, r), arch=arch)
        models.append((net, stats))
        histories.append(history)
    return models, histories


def cross_validate(clips: Sequence[ClipData], config: RunConfig, folds: Optional[Sequence[str]] = None,
                   arch: Optional[Architecture] = None) -> CVResult:
    """Train on all-but-one fold, test on the held-out fold, for every fold."""
    if folds is None:
        folds = sorted({c.fold for c in clips}, key=lambda f: (not f.isdigit(), int(f) if f.isdigit() else 0, f))
    results = []
    for index, fold in enumerate(folds):
        test = [c for c in clips if c.fold == fold]
        train = [c for c in clips if c.fold != fold]
        if not test:
            raise ManifestError(f"fold {fold!r} has no test clips")
        if not train:
            raise ManifestError(f"fold {fold!r} leaves no training clips")
        log.info("fold %s: %d training clips, %d test clips", fold, len(train), len(test))
        models, histories = train_fold_models(train, config, index, arch)
        predictions = [predict_clip(models, c, config) for c in test]
        results.append(FoldResult(fold, evaluate(predictions, config.classes), predictions, models, histories))
    return CVResult(results)
