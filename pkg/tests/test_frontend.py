import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenenet import frontend
from scenenet.errors import AudioFormatError, FileFormatError, SampleRateError, TooShortError, VersionError
from scenenet.frontend import (
    AnalysisWindow,
    AudioClip,
    MelSpectrogram,
    compute_mel_spectrogram,
    load_audio,
    mix_to_mono,
    peak_normalize,
    segment_windows,
    write_wav,
)


def test_stereo_mixdown_then_normalise_arithmetic():
    stereo = np.array([[0.2, 0.6], [-0.4, 0.0]])
    np.testing.assert_allclose(mix_to_mono(stereo), [0.4, -0.2])
    np.testing.assert_allclose(peak_normalize(mix_to_mono(stereo)), [1.0, -0.5])


@pytest.mark.parametrize("bits", [16, 24])
def test_load_stereo_wav(tmp_path, bits):
    path = tmp_path / "s.wav"
    write_wav(path, np.array([[0.2, 0.6], [-0.4, 0.0]]), bits=bits)
    clip = load_audio(path, scene_label="bus")
    assert clip.sample_rate == 44100
    assert clip.clip_id == "s"
    assert clip.scene_label == "bus"
    np.testing.assert_allclose(clip.samples, [1.0, -0.5], atol=1e-4)


def test_silent_clip_passes_through(tmp_path):
    path = tmp_path / "z.wav"
    write_wav(path, np.zeros(100))
    clip = load_audio(path)
    assert np.all(clip.samples == 0)


def test_peak_one_is_unchanged():
    x = np.array([0.25, -1.0, 0.5])
    np.testing.assert_array_equal(peak_normalize(x), x)


def test_wrong_rate_is_rejected(tmp_path):
    path = tmp_path / "r.wav"
    write_wav(path, np.zeros(10), sample_rate=22050)
    with pytest.raises(SampleRateError):
        load_audio(path)


def test_unsupported_encodings(tmp_path):
    # 8-bit PCM
    fmt = struct.pack("<HHIIHH", 1, 1, 44100, 44100, 1, 8)
    data = bytes(10)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path = tmp_path / "b8.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(AudioFormatError):
        load_audio(path)
    junk = tmp_path / "junk.wav"
    junk.write_bytes(b"not audio at all")
    with pytest.raises(AudioFormatError):
        load_audio(junk)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_audio(tmp_path / "nope.wav")


def test_extensible_header_is_accepted(tmp_path):
    samples = (np.array([1000, -2000, 500], dtype="<i2")).tobytes()
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 44100, 88200, 2, 16) + struct.pack("<HHI", 22, 16, 0)
    fmt += struct.pack("<H", 1) + bytes(14)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(samples)) + samples
    path = tmp_path / "ext.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    np.testing.assert_allclose(load_audio(path).samples, [0.5, -1.0, 0.25])


def test_thirty_second_frame_count():
    # (1323000 - 2048) // 1024 + 1 = 1289 + 1
    assert frontend.num_frames_for(1_323_000) == 1290
    mel = compute_mel_spectrogram(AudioClip(np.zeros(1_323_000), 44100, "z"))
    assert mel.values.shape == (1290, 128)
    assert len(segment_windows(mel)) == 30


def test_silence_maps_to_log_floor():
    mel = compute_mel_spectrogram(AudioClip(np.zeros(5000), 44100, "z"))
    assert np.all(mel.values == np.float32(np.log(1e-10)))


def test_too_short_clip():
    with pytest.raises(TooShortError):
        compute_mel_spectrogram(AudioClip(np.zeros(2047), 44100, "s"))


def test_sinusoid_peaks_in_nearest_mel_band():
    # independent centre table: 130 mel-spaced corners from 0 Hz to Nyquist
    top = 2595 * np.log10(1 + 22050 / 700)
    corners = 700 * (10 ** (np.linspace(0, top, 130) / 2595) - 1)
    centres = corners[1:-1]
    t = np.arange(44100 * 2) / 44100
    clip = AudioClip(np.sin(2 * np.pi * 1000 * t), 44100, "sine")
    energy = np.exp(compute_mel_spectrogram(clip).values.astype(np.float64)).mean(axis=0)
    assert int(np.argmax(energy)) == int(np.argmin(np.abs(centres - 1000)))


def test_filterbank_unit_area_for_wide_filters():
    fb = frontend.mel_filterbank()
    assert fb.shape == (128, 1025)
    bin_hz = 44100 / 2048
    edges = frontend.mel_band_edges()
    wide = (edges[2:] - edges[:-2]) > 20 * bin_hz
    np.testing.assert_allclose(fb[wide].sum(axis=1) * bin_hz, 1.0, rtol=1e-2)


def _mel(frames):
    return MelSpectrogram(np.arange(frames * 128, dtype=np.float32).reshape(frames, 128), "c", "park")


@pytest.mark.parametrize("frames, expected", [(1291, 30), (43, 1), (85, 1), (86, 2)])
def test_window_counts(frames, expected):
    windows = segment_windows(_mel(frames))
    assert len(windows) == expected
    assert [w.window_index for w in windows] == list(range(expected))
    assert all(w.values.shape == (43, 128) and w.scene_label == "park" for w in windows)


def test_fewer_than_one_window():
    with pytest.raises(TooShortError):
        segment_windows(_mel(42))


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=2048, max_value=30000))
def test_frame_count_formula(n):
    mel = compute_mel_spectrogram(AudioClip(np.random.default_rng(n).uniform(-1, 1, n), 44100, "r"))
    assert mel.num_frames == (n - 2048) // 1024 + 1


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50))
def test_identical_channels_mix_to_either(values):
    x = np.array(values)
    np.testing.assert_allclose(mix_to_mono(np.stack([x, x], axis=1)), x)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_normalisation_idempotent(values):
    once = peak_normalize(np.array(values))
    np.testing.assert_allclose(peak_normalize(once), once, rtol=1e-12, atol=0)


@given(st.integers(43, 400), st.integers(0, 20))
def test_windows_tile_the_spectrogram(frames, k):
    mel = _mel(frames)
    windows = segment_windows(mel)
    k = min(k, len(windows) - 1)
    joined = np.concatenate([w.values for w in windows[:k + 1]])
    np.testing.assert_array_equal(joined, mel.values[:43 * (k + 1)])


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_log_compression_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert frontend.log_compress(hi) >= frontend.log_compress(lo)


def test_window_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    windows = [AnalysisWindow(rng.standard_normal((43, 128)).astype(np.float32), "clip/ä", i, "tram")
               for i in range(3)]
    path = tmp_path / "c.scnw"
    frontend.write_window_cache(path, windows)
    raw = path.read_bytes()
    assert raw[:4] == b"SCNW"
    back = frontend.read_window_cache(path)
    assert len(back) == 3
    for a, b in zip(windows, back):
        np.testing.assert_array_equal(a.values, b.values)
        assert (b.clip_id, b.window_index, b.scene_label) == ("clip/ä", a.window_index, "tram")
    with pytest.raises(FileFormatError):
        frontend.decode_window_cache(raw[:-5])
    with pytest.raises(VersionError, match="version 7"):
        frontend.decode_window_cache(raw[:4] + struct.pack("<I", 7) + raw[8:])
