"""Synthetic band-limited noise clips for end-to-end tests."""

from pathlib import Path

import numpy as np

from scenenet.config import write_manifest
from scenenet.frontend import SAMPLE_RATE, write_wav

BANDS = {"high": (5000.0, 12000.0), "low": (200.0, 1500.0)}


def band_noise(seconds: float, band: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    n = int(round(seconds * SAMPLE_RATE))
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0
    x = np.fft.irfft(spectrum, n)
    return 0.5 * x / np.max(np.abs(x))


def make_dataset(root, clips_per_class: int, seconds: float = 30.0, folds: int = 1, seed: int = 0,
                 stereo: bool = False):
    """Write WAVs plus ``manifest.tsv`` under ``root``; clips are dealt round-robin into folds."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for scene, band in BANDS.items():
        for i in range(clips_per_class):
            x = band_noise(seconds, band, rng)
            if stereo:
                x = np.stack([x, band_noise(seconds, band, rng)], axis=1)
            name = f"{scene}_{i:02d}.wav"
            write_wav(root / name, x)
            rows.append((name, scene, str(i % folds + 1)))
    write_manifest(root / "manifest.tsv", rows)
    return root / "manifest.tsv"


def synth_config(**overrides) -> str:
    values = {"scenes": "high,low", "repeats": 1}
    values.update(overrides)
    return "".join(f"{k}={v}\n" for k, v in values.items())
