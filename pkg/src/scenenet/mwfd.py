"""Multiple-width frequency-delta (MWFD) augmentation and standardisation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _binio
from .errors import ConfigurationError, FileFormatError, InsufficientDataError, ParameterError
from .frontend import AnalysisWindow

STATIC = "static"
DEFAULT_DELTA_WIDTHS = (3, 11, 19)
STD_FLOOR = 1e-8

STATS_MAGIC = b"SCNS"
STATS_VERSION = 1


@dataclass(frozen=True)
class DeltaSpec:
    """Half-width ``K`` of the symmetric delta regression window."""

    K: int

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ParameterError(f"delta half-width must be a positive integer, got {self.K!r}")

    @property
    def width(self) -> int:
        return 2 * self.K + 1

    @classmethod
    def from_width(cls, width: int) -> "DeltaSpec":
        if width < 3 or width % 2 == 0:
            raise ParameterError(f"delta width must be odd and >= 3, got {width}")
        return cls((width - 1) // 2)


def delta_variant(width: int) -> str:
    return f"delta{width}"


def variant_names(widths: Sequence[int] = DEFAULT_DELTA_WIDTHS) -> list[str]:
    return [STATIC] + [delta_variant(w) for w in widths]


@dataclass
class FeatureExample:
    values: np.ndarray  # [43, 128]
    variant: str
    scene_label: Optional[str]
    clip_id: str
    window_index: int


def frequency_delta(values: np.ndarray, spec: DeltaSpec) -> np.ndarray:
    """Delta regression along the last (frequency) axis with edge replication.

    Works row by row: ``d_f = sum_k k (x[f+k] - x[f-k]) / (2 sum_k k^2)``
    for ``k = 1..K``.
    """
    x = np.asarray(values)
    if x.ndim < 1:
        raise ParameterError("delta input must have a frequency axis")
    K = spec.K
    n_freq = x.shape[-1]
    if spec.width > n_freq:
        raise ParameterError(f"delta width {spec.width} exceeds {n_freq} frequency bins")
    pad = [(0, 0)] * (x.ndim - 1) + [(K, K)]
    xp = np.pad(x.astype(np.float64), pad, mode="edge")
    acc = np.zeros(x.shape, dtype=np.float64)
    for k in range(1, K + 1):
        acc += k * (xp[..., K + k:K + k + n_freq] - xp[..., K - k:K - k + n_freq])
    denom = 2.0 * sum(k * k for k in range(1, K + 1))
    return (acc / denom).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def augment_mwfd(window: AnalysisWindow, widths: Sequence[int] = DEFAULT_DELTA_WIDTHS) -> list[FeatureExample]:
    """Return the static window followed by one delta copy per width."""
    specs = [DeltaSpec.from_width(w) for w in widths]
    out = [FeatureExample(window.values, STATIC, window.scene_label, window.clip_id, window.window_index)]
    for spec in specs:
        out.append(
            FeatureExample(
                frequency_delta(window.values, spec),
                delta_variant(spec.width),
                window.scene_label,
                window.clip_id,
                window.window_index,
            )
        )
    return out


def static_example(window: AnalysisWindow) -> FeatureExample:
    return FeatureExample(window.values, STATIC, window.scene_label, window.clip_id, window.window_index)


def expand_windows(windows: Iterable[AnalysisWindow], mode: str = "mwfd",
                   widths: Sequence[int] = DEFAULT_DELTA_WIDTHS) -> list[FeatureExample]:
    """Turn windows into training examples: ``mode`` is ``"mwfd"`` or ``"static"``."""
    if mode == "mwfd":
        return [ex for win in windows for ex in augment_mwfd(win, widths)]
    if mode == "static":
        return [static_example(win) for win in windows]
    raise ConfigurationError(f"unknown augmentation mode {mode!r}")


@dataclass
class StandardizationStats:
    """Per-variant, per-mel-bin mean and standard deviation."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    @property
    def variants(self) -> list[str]:
        return list(self.mean)

    def to_bytes(self) -> bytes:
        w = _binio.Writer()
        w.magic(STATS_MAGIC)
        w.u32(STATS_VERSION)
        w.u32(len(self.mean))
        for variant in self.mean:
            w.text(variant)
            w.floats(self.mean[variant])
            w.floats(self.std[variant])
        return w.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes, n_bins: int = 128) -> "StandardizationStats":
        r = _binio.Reader(raw, "SCNS")
        r.expect_magic(STATS_MAGIC)
        r.expect_version(STATS_VERSION)
        mean, std = {}, {}
        for _ in range(r.u32()):
            variant = r.text()
            mean[variant] = r.floats((n_bins,))
            std[variant] = r.floats((n_bins,))
        r.finish()
        if any(np.any(s <= 0) for s in std.values()):
            raise FileFormatError("SCNS file contains non-positive standard deviations")
        return cls(mean, std)


def fit_standardizer(training_examples: Iterable[FeatureExample]) -> StandardizationStats:
    """Pool every frame of every example of a variant and take per-bin moments.

    The standard deviation is the population value, floored at ``1e-8``.
    """
    groups: dict[str, list[np.ndarray]] = {}
    for ex in training_examples:
        groups.setdefault(ex.variant, []).append(ex.values)
    if not groups:
        raise InsufficientDataError("no training examples to fit standardisation statistics")
    mean, std = {}, {}
    for variant, arrays in groups.items():
        if len(arrays) < 2:
            raise InsufficientDataError(
                f"variant {variant!r} has {len(arrays)} example(s), need at least 2"
            )
        frames = np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays], axis=0)
        mu = frames.mean(axis=0)
        sigma = np.sqrt(np.mean((frames - mu) ** 2, axis=0))
        mean[variant] = mu.astype(np.float32)
        std[variant] = np.maximum(sigma, STD_FLOOR).astype(np.float32)
    return StandardizationStats(mean, std)


def apply_standardizer(example: FeatureExample, stats: StandardizationStats) -> FeatureExample:
    if example.variant not in stats.mean:
        raise ConfigurationError(f"no standardisation statistics for variant {example.variant!r}")
    mu = stats.mean[example.variant].astype(np.float64)
    sigma = stats.std[example.variant].astype(np.float64)
    values = ((np.asarray(example.values, dtype=np.float64) - mu) / sigma).astype(np.float32)
    return replace(example, values=values)


def standardize_all(examples: Iterable[FeatureExample], stats: StandardizationStats) -> list[FeatureExample]:
    return [apply_standardizer(ex, stats) for ex in examples]
