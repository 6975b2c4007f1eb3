from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import noise, tone
from voxblend.config import FeatureConfig
from voxblend.errors import FeatureDumpError, FrameIndexError, ShapeError, VoxblendError
from voxblend.frontend import (
    FeatureExtractor,
    FeatureWindow,
    Normalizer,
    apply_normalizer,
    autocorrelation,
    extract_raw_window,
    feature_window,
    feature_windows,
    fit_normalizer,
    levinson_durbin,
    load_feature_dump,
    lpc_frame,
    mel_filterbank,
    mfcc_frame,
    save_feature_dump,
    video_frame_count,
)
from voxblend.wav import AudioClip

CFG = FeatureConfig()


def _reference_mfcc(frame: np.ndarray) -> np.ndarray:
    """Straight-line MFCC: pre-emphasis, periodic Hann, 4096-point power spectrum,
    40 HTK-mel triangles on 0-8000 Hz, natural log, orthonormal DCT-II."""
    n = frame.size
    emph = frame.copy()
    for i in range(n - 1, 0, -1):
        emph[i] = frame[i] - 0.97 * frame[i - 1]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    power = np.abs(np.fft.rfft(emph * hann, n=4096)) ** 2

    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = [hz(m) for m in np.linspace(mel(0.0), mel(8000.0), 42)]
    energies = np.zeros(40)
    for m in range(40):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for k in range(power.size):
            f = k * 44_100 / 4096
            if lo < f < hi:
                w = (f - lo) / (mid - lo) if f <= mid else (hi - f) / (hi - mid)
                energies[m] += w * power[k]
    logs = np.log(np.maximum(energies, 1e-10))
    out = np.zeros(39)
    for i in range(39):
        scale = np.sqrt(1.0 / 40) if i == 0 else np.sqrt(2.0 / 40)
        out[i] = scale * sum(logs[m] * np.cos(np.pi * i * (2 * m + 1) / 80) for m in range(40))
    return out


def test_frame_count_and_window_size() -> None:
    clip = tone(440.0, 1.0)
    assert video_frame_count(clip) == 30
    window = feature_window(clip, 0, CFG)
    assert window.coeffs.shape == (64, 39)
    assert window.size == 2496


def test_raw_window_is_zero_padded_and_aligned(rng) -> None:
    clip = AudioClip(rng.uniform(-0.5, 0.5, size=44_100))
    raw = extract_raw_window(clip, 0)
    assert raw.size == 95_550
    assert np.all(raw[:47_040] == 0.0)
    assert np.array_equal(raw[47_040:], clip.samples[: 95_550 - 47_040])
    raw5 = extract_raw_window(clip, 5)
    assert raw5[47_040 + 10] == clip.samples[5 * 1470 + 10]


def test_frame_index_out_of_range() -> None:
    clip = tone(440.0, 1.0)
    with pytest.raises(FrameIndexError):
        feature_window(clip, 30, CFG)
    with pytest.raises(FrameIndexError):
        extract_raw_window(clip, -1)


def test_mfcc_matches_reference_on_tone() -> None:
    frame = tone(1000.0, 2940 / 44_100).samples
    assert frame.size == 2940
    np.testing.assert_allclose(mfcc_frame(frame, CFG), _reference_mfcc(frame), rtol=0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(gain=st.floats(min_value=0.05, max_value=3.0))
def test_mfcc_gain_only_moves_c0(gain: float) -> None:
    frame = noise(5, 2940 / 44_100, 0.2).samples
    base = mfcc_frame(frame, CFG)
    scaled = mfcc_frame(frame * gain, CFG)
    np.testing.assert_allclose(scaled[1:], base[1:], rtol=0, atol=1e-6)
    assert scaled[0] - base[0] == pytest.approx(np.sqrt(40) * np.log(gain * gain), abs=1e-6)


def test_mel_filterbank_shape_and_support() -> None:
    bank = mel_filterbank(CFG)
    assert bank.shape == (40, 2049)
    assert np.all(bank >= 0.0)
    freqs = np.arange(2049) * 44_100 / 4096
    assert np.all(bank[:, freqs >= 8000.0] == 0.0)
    assert np.all(bank.max(axis=1) > 0.0)


def test_frame_length_is_checked() -> None:
    with pytest.raises(ShapeError):
        mfcc_frame(np.zeros(100), CFG)


def test_lpc_recovers_ar2_process() -> None:
    rng = np.random.default_rng(0)
    x = np.zeros(2940 + 200)
    e = rng.normal(0.0, 0.1, size=x.size)
    for n in range(2, x.size):
        x[n] = 1.3 * x[n - 1] - 0.6 * x[n - 2] + e[n]
    cfg = FeatureConfig(feature_kind="lpc", lpc_order=2)
    coeffs = lpc_frame(x[200:], cfg)
    np.testing.assert_allclose(coeffs, [1.3, -0.6], atol=0.05)


def test_levinson_matches_toeplitz_solve() -> None:
    frame = noise(11, 2940 / 44_100).samples
    r = autocorrelation(frame, 10)
    coeffs, err = levinson_durbin(r, 10)
    expected = scipy.linalg.solve_toeplitz(r[:10], r[1:11])
    np.testing.assert_allclose(coeffs, expected, rtol=1e-8, atol=1e-10)
    assert 0.0 < err < r[0]


def test_lpc_on_silence_is_zero() -> None:
    cfg = FeatureConfig(feature_kind="lpc")
    assert np.array_equal(lpc_frame(np.zeros(2940), cfg), np.zeros(39))
    assert cfg.n_columns == 39


def test_extractor_matches_direct_windows() -> None:
    clip = noise(2, 0.5)
    extractor = FeatureExtractor(CFG)
    for t in (0, 7, 14):
        direct = feature_window(clip, t, CFG)
        cached = extractor.window(t, clip.samples)
        assert np.array_equal(direct.coeffs, cached.coeffs)


def test_threaded_extraction_is_bit_identical() -> None:
    clip = noise(3, 0.5)
    sequential = feature_windows(clip, CFG, workers=1)
    threaded = feature_windows(clip, CFG, workers=4)
    assert sequential.shape == (15, 64, 39)
    assert np.array_equal(sequential, threaded)


def test_adjacent_windows_share_rows() -> None:
    windows = feature_windows(noise(4, 0.3), CFG)
    assert np.array_equal(windows[0, 1:], windows[1, :-1])


def test_extractor_forgets_old_rows() -> None:
    clip = noise(6, 0.3)
    extractor = FeatureExtractor(CFG)
    extractor.window(3, clip.samples)
    assert len(extractor) == 64
    extractor.forget_before(0)
    assert len(extractor) == 64 - 29


def test_normalizer_zscores_and_floors_constant_columns(rng) -> None:
    windows = rng.normal(3.0, 2.0, size=(20, 64, 39))
    windows[:, :, 5] = 7.0
    normalizer = fit_normalizer(windows)
    out = apply_normalizer(windows, normalizer)
    flat = out.reshape(-1, 39)
    live = np.arange(39) != 5
    np.testing.assert_allclose(flat[:, live].mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(flat[:, live].std(axis=0), 1.0, atol=1e-6)
    assert np.all(flat[:, 5] == 0.0)
    assert normalizer.std[5] == 0.0
    shifted = windows[:1].copy()
    shifted[..., 5] = 7.5
    np.testing.assert_allclose(apply_normalizer(shifted, normalizer)[..., 5], 0.5 / 1e-8)


def test_normalizer_accepts_feature_windows(rng) -> None:
    window = FeatureWindow(rng.normal(size=(64, 39)), 4)
    out = apply_normalizer(window, Normalizer.identity(39))
    assert isinstance(out, FeatureWindow)
    assert out.frame_index == 4
    np.testing.assert_allclose(out.coeffs, window.coeffs)


def test_normalizer_tensor_round_trip(rng) -> None:
    normalizer = Normalizer.from_stats(rng.normal(size=39), rng.uniform(0.5, 2.0, size=39))
    restored = Normalizer.from_tensors({k: v.copy() for k, v in normalizer.tensors().items()})
    assert np.array_equal(restored.mean, normalizer.mean)
    assert np.array_equal(restored.std, normalizer.std)


def test_fit_normalizer_needs_data() -> None:
    with pytest.raises(VoxblendError):
        fit_normalizer(np.zeros((0, 64, 39)))


def test_feature_dump_round_trip(tmp_path, rng) -> None:
    windows = rng.normal(size=(3, 64, 39)).astype(np.float32)
    path = tmp_path / "f.a2ff"
    save_feature_dump(path, windows)
    assert path.read_bytes()[:4] == b"A2FF"
    assert np.array_equal(load_feature_dump(path), windows)


def test_feature_dump_bad_magic(tmp_path) -> None:
    path = tmp_path / "bad.a2ff"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FeatureDumpError, match="bad magic"):
        load_feature_dump(path)


def test_feature_config_invariants() -> None:
    with pytest.raises(ValueError):
        FeatureConfig(frame_len_samples=3000)
    with pytest.raises(ValueError):
        FeatureConfig(n_coeffs=41)
