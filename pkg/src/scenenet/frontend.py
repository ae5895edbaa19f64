"""Audio decoding and log-mel analysis windows.

Clips are decoded from PCM WAV, mixed down to mono, peak normalised,
turned into a 2048/1024 Hann STFT power spectrum, projected onto 128
mel bands and cut into non-overlapping 43-frame windows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _binio
from .errors import AudioFormatError, SampleRateError, TooShortError

SAMPLE_RATE = 44100
FRAME_SIZE = 2048
FRAME_HOP = 1024
N_MELS = 128
WINDOW_FRAMES = 43
LOG_EPS = 1e-10

_PCM = 0x0001
_EXTENSIBLE = 0xFFFE

WINDOW_CACHE_MAGIC = b"SCNW"
WINDOW_CACHE_VERSION = 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str
    scene_label: Optional[str] = None


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [num_frames, 128]
    clip_id: str
    scene_label: Optional[str] = None
    frame_size: int = FRAME_SIZE
    frame_hop: int = FRAME_HOP

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class AnalysisWindow:
    values: np.ndarray  # [43, 128], time x frequency
    clip_id: str
    window_index: int
    scene_label: Optional[str] = None


def _read_pcm(path: Path):
    """Parse a RIFF/WAVE file and return (int samples [n, channels], bits, rate)."""
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None or len(fmt) < 16:
        raise AudioFormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if tag != _PCM:
        raise AudioFormatError(f"{path}: only integer PCM is supported (format tag {tag:#x})")
    if bits not in (16, 24):
        raise AudioFormatError(f"{path}: unsupported bit depth {bits}")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: unsupported channel count {channels}")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")

    width = bits // 8
    n = len(data) // (width * channels)
    data = data[: n * width * channels]
    if width == 2:
        ints = np.frombuffer(data, dtype="<i2").astype(np.int32)
    else:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
    return ints.reshape(n, channels), bits, rate


def mix_to_mono(samples: np.ndarray) -> np.ndarray:
    """Average channels of a [n, channels] array sample-wise."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        return samples
    return samples.mean(axis=1)


def peak_normalize(samples: np.ndarray) -> np.ndarray:
    """Divide by the largest absolute value; all-zero input is returned unchanged."""
    samples = np.asarray(samples, dtype=np.float64)
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0:
        return samples.copy()
    return samples / peak


def load_audio(path, clip_id: Optional[str] = None, scene_label: Optional[str] = None) -> AudioClip:
    """Decode a 16/24-bit PCM WAV into a peak-normalised mono clip.

    Raises ``OSError`` if the file cannot be read, ``AudioFormatError`` for
    encodings other than 16/24-bit integer PCM with one or two channels, and
    ``SampleRateError`` if the rate is not 44100 Hz (nothing is resampled).
    """
    path = Path(path)
    ints, bits, rate = _read_pcm(path)
    scaled = ints.astype(np.float64) / float(1 << (bits - 1))
    mono = peak_normalize(mix_to_mono(scaled))
    return AudioClip(
        samples=mono,
        sample_rate=rate,
        clip_id=clip_id if clip_id is not None else path.stem,
        scene_label=scene_label,
    )


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE, bits: int = 16):
    """Write float samples in [-1, 1] ([n] or [n, channels]) as integer PCM."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    channels = samples.shape[1]
    full = (1 << (bits - 1)) - 1
    ints = np.clip(np.round(samples * full), -full - 1, full).astype(np.int32)
    if bits == 16:
        data = ints.astype("<i2").tobytes()
    elif bits == 24:
        u = (ints.reshape(-1) & 0xFFFFFF).astype(np.uint32)
        data = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    else:
        raise AudioFormatError(f"unsupported bit depth {bits}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", _PCM, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Return the n_mels + 2 corner frequencies (Hz) of the triangular filters."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_SIZE, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filters of unit area, shape [n_mels, n_fft // 2 + 1]."""
    edges = mel_band_edges(n_mels, 0.0, sample_rate / 2)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (upper - lower))


_FILTERBANK = None


def _default_filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def hann_window(n: int = FRAME_SIZE) -> np.ndarray:
    """Periodic Hann window (the STFT convention)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def log_compress(values) -> np.ndarray:
    """Natural log with a 1e-10 floor so silent bands stay finite."""
    return np.log(np.asarray(values, dtype=np.float64) + LOG_EPS)


def num_frames_for(num_samples: int) -> int:
    return (num_samples - FRAME_SIZE) // FRAME_HOP + 1


def compute_mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    samples = np.asarray(clip.samples, dtype=np.float64)
    if samples.shape[0] < FRAME_SIZE:
        raise TooShortError(
            f"clip {clip.clip_id!r} has {samples.shape[0]} samples, need at least {FRAME_SIZE}"
        )
    n_frames = num_frames_for(samples.shape[0])
    frames = np.lib.stride_tricks.sliding_window_view(samples, FRAME_SIZE)[::FRAME_HOP][:n_frames]
    power = np.abs(np.fft.rfft(frames * hann_window(), axis=1)) ** 2
    mel = power @ _default_filterbank().T
    values = log_compress(mel).astype(np.float32)
    return MelSpectrogram(values=values, clip_id=clip.clip_id, scene_label=clip.scene_label)


def segment_windows(mel: MelSpectrogram) -> list[AnalysisWindow]:
    """Cut the spectrogram into consecutive 43-frame windows, dropping the remainder."""
    count = mel.num_frames // WINDOW_FRAMES
    if count == 0:
        raise TooShortError(
            f"clip {mel.clip_id!r} has {mel.num_frames} frames, need at least {WINDOW_FRAMES}"
        )
    return [
        AnalysisWindow(
            values=mel.values[i * WINDOW_FRAMES:(i + 1) * WINDOW_FRAMES].copy(),
            clip_id=mel.clip_id,
            window_index=i,
            scene_label=mel.scene_label,
        )
        for i in range(count)
    ]


def clip_windows(path, clip_id: Optional[str] = None, scene_label: Optional[str] = None) -> list[AnalysisWindow]:
    return segment_windows(compute_mel_spectrogram(load_audio(path, clip_id, scene_label)))


def encode_window_cache(windows: list[AnalysisWindow]) -> bytes:
    if not windows:
        raise ValueError("cannot cache an empty window list")
    first = windows[0]
    w = _binio.Writer()
    w.magic(WINDOW_CACHE_MAGIC)
    w.u32(WINDOW_CACHE_VERSION)
    w.u32(len(windows))
    w.u32(first.values.shape[0])
    w.u32(first.values.shape[1])
    w.text(first.clip_id)
    w.text(first.scene_label or "")
    w.floats(np.stack([win.values for win in windows]))
    return w.getvalue()


def decode_window_cache(raw: bytes) -> list[AnalysisWindow]:
    r = _binio.Reader(raw, "SCNW")
    r.expect_magic(WINDOW_CACHE_MAGIC)
    r.expect_version(WINDOW_CACHE_VERSION)
    count, n_time, n_freq = r.u32(), r.u32(), r.u32()
    clip_id = r.text()
    label = r.text() or None
    values = r.floats((count, n_time, n_freq))
    r.finish()
    return [AnalysisWindow(values[i].copy(), clip_id, i, label) for i in range(count)]


def write_window_cache(path, windows: list[AnalysisWindow]):
    Path(path).write_bytes(encode_window_cache(windows))


def read_window_cache(path) -> list[AnalysisWindow]:
    return decode_window_cache(Path(path).read_bytes())
