"""Clip-level decisions from window posteriors, ensembling and scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, LabelError

S1 = "S1"
S2 = "S2"
STRATEGIES = (S1, S2)


@dataclass
class WindowPosterior:
    probs: np.ndarray
    clip_id: str
    window_index: int
    variant: str


@dataclass
class ClipPrediction:
    clip_id: str
    probs: np.ndarray
    predicted_label: int
    true_label: Optional[str]
    strategy: str

    def predicted_scene(self, classes: Sequence[str]) -> str:
        return classes[self.predicted_label]


def _argmax(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(probs))


def _single_clip(posteriors: Sequence[WindowPosterior]) -> str:
    if not posteriors:
        raise DataError("cannot aggregate an empty posterior set")
    clip_ids = {p.clip_id for p in posteriors}
    if len(clip_ids) != 1:
        raise DataError(f"posteriors from several clips passed together: {sorted(clip_ids)}")
    return posteriors[0].clip_id


def aggregate_s1(posteriors: Sequence[WindowPosterior], true_label: Optional[str] = None) -> ClipPrediction:
    """Overall mean: average every posterior of the clip (all windows, all variants)."""
    clip_id = _single_clip(posteriors)
    mean = np.mean([np.asarray(p.probs, dtype=np.float64) for p in posteriors], axis=0)
    return ClipPrediction(clip_id, mean, _argmax(mean), true_label, S1)


def aggregate_s2(posteriors: Sequence[WindowPosterior], true_label: Optional[str] = None,
                 renormalize: bool = True, variants: Optional[Iterable[str]] = None) -> ClipPrediction:
    """Folded mean: multiply the variant posteriors of each window, then average windows.

    Each window's product is rescaled to unit mass (a uniform vector if it
    underflows to zero) unless ``renormalize`` is False. Every window must
    carry the same variant set, by default the set seen across the clip.
    """
    clip_id = _single_clip(posteriors)
    expected = set(variants) if variants is not None else {p.variant for p in posteriors}
    by_window: dict[int, dict[str, np.ndarray]] = {}
    for p in posteriors:
        slot = by_window.setdefault(p.window_index, {})
        if p.variant in slot:
            raise DataError(f"window {p.window_index} of clip {clip_id!r} has two {p.variant!r} posteriors")
        slot[p.variant] = np.asarray(p.probs, dtype=np.float64)
    folded = []
    for index in sorted(by_window):
        slot = by_window[index]
        if set(slot) != expected:
            missing = sorted(expected - set(slot)) or sorted(set(slot) - expected)
            raise DataError(f"window {index} of clip {clip_id!r} has mismatched variants: {missing}")
        product = np.prod([slot[v] for v in sorted(slot)], axis=0)
        if renormalize:
            mass = product.sum()
            product = product / mass if mass > 0 else np.full_like(product, 1.0 / product.size)
        folded.append(product)
    mean = np.mean(folded, axis=0)
    return ClipPrediction(clip_id, mean, _argmax(mean), true_label, S2)


def aggregate(posteriors: Sequence[WindowPosterior], strategy: str, true_label: Optional[str] = None,
              renormalize: bool = True) -> ClipPrediction:
    if strategy == S1:
        return aggregate_s1(posteriors, true_label)
    if strategy == S2:
        return aggregate_s2(posteriors, true_label, renormalize=renormalize)
    raise ConfigurationError(f"unknown aggregation strategy {strategy!r}")


def ensemble_average(predictions: Sequence[ClipPrediction]) -> ClipPrediction:
    """Average the clip-level vectors of several models and take the argmax again."""
    if not predictions:
        raise DataError("no predictions to ensemble")
    strategies = {p.strategy for p in predictions}
    if len(strategies) != 1:
        raise ConfigurationError(f"cannot ensemble predictions of different strategies {sorted(strategies)}")
    clip_ids = {p.clip_id for p in predictions}
    if len(clip_ids) != 1:
        raise DataError(f"cannot ensemble predictions of different clips {sorted(clip_ids)}")
    mean = np.mean([np.asarray(p.probs, dtype=np.float64) for p in predictions], axis=0)
    first = predictions[0]
    return ClipPrediction(first.clip_id, mean, _argmax(mean), first.true_label, first.strategy)


@dataclass
class ConfusionMatrix:
    """Counts with true labels on rows and predicted labels on columns."""

    classes: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ConfigurationError("confusion matrices over different vocabularies")
        return ConfusionMatrix(self.classes, self.counts + other.counts)


@dataclass
class EvalResult:
    accuracy: float
    class_accuracy: dict[str, float]
    confusion: ConfusionMatrix
    n_clips: int = field(default=0)


def evaluate(predictions: Sequence[ClipPrediction], classes: Sequence[str],
             truth: Optional[Mapping[str, str]] = None) -> EvalResult:
    """Clip accuracy, per-class recall and the confusion matrix.

    True labels come from ``truth`` (clip_id -> scene) when given, otherwise
    from each prediction's ``true_label``.
    """
    classes = list(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p in predictions:
        label = truth[p.clip_id] if truth is not None else p.true_label
        if label is None:
            raise DataError(f"clip {p.clip_id!r} has no true label")
        if label not in lookup:
            raise LabelError(f"unknown scene label {label!r}")
        counts[lookup[label], p.predicted_label] += 1
    cm = ConfusionMatrix(classes, counts)
    return EvalResult(cm.accuracy, class_accuracy(cm), cm, cm.total)


def class_accuracy(cm: ConfusionMatrix) -> dict[str, float]:
    rows = cm.counts.sum(axis=1)
    return {
        c: (float(cm.counts[i, i] / rows[i]) if rows[i] else float("nan"))
        for i, c in enumerate(cm.classes)
    }


def write_posteriors(path, posteriors: Iterable[WindowPosterior], classes: Sequence[str]):
    """Tab-separated exchange file: clip_id, window_index, variant, one column per class."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["clip_id", "window_index", "variant", *classes])
        for p in posteriors:
            out.writerow([p.clip_id, p.window_index, p.variant, *(f"{v:.9g}" for v in p.probs)])


def read_posteriors(path) -> tuple[list[WindowPosterior], list[str]]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0][:3] != ["clip_id", "window_index", "variant"]:
        raise DataError(f"{path}: not a posterior exchange file")
    classes = rows[0][3:]
    out = []
    for row in rows[1:]:
        if len(row) != 3 + len(classes):
            raise DataError(f"{path}: row has {len(row)} columns, expected {3 + len(classes)}")
        out.append(WindowPosterior(np.array(row[3:], dtype=np.float64), row[0], int(row[1]), row[2]))
    return out, classes
