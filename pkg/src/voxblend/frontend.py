"""Per-video-frame acoustic feature windows.

Every video frame t owns 1470 samples; its window adds 32 frames (47040
samples) of context on each side and is cut into 64 audio frames of 2940
samples at hop 1470. Since the window for t starts at ``(t - 32) * 1470``,
audio frames lie on a global grid ``j * 1470`` and can be shared between
consecutive windows.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.fft
import scipy.signal

from .codec import (
    iter_table,
    read_exact,
    read_header,
    read_u32,
    tensor_text,
    text_tensor,
    write_header,
    write_table,
    write_u32,
)
from .config import (
    CONTEXT_SAMPLES,
    RAW_WINDOW_SAMPLES,
    SAMPLES_PER_FRAME,
    WINDOW_ROWS,
    FeatureConfig,
    default_workers,
)
from .errors import FeatureDumpError, FrameIndexError, NormalizerMismatch, ShapeError, VoxblendError
from .tracing import make_trace
from .wav import AudioClip, load_wav, save_wav

__all__ = [
    "AudioClip",
    "FeatureWindow",
    "FeatureExtractor",
    "Normalizer",
    "load_wav",
    "save_wav",
    "video_frame_count",
    "extract_raw_window",
    "mfcc_frame",
    "lpc_frame",
    "feature_window",
    "feature_windows",
    "fit_normalizer",
    "apply_normalizer",
    "save_normalizer",
    "load_normalizer",
    "save_feature_dump",
    "load_feature_dump",
]

_trace = make_trace("frontend")

CONTEXT_FRAMES = CONTEXT_SAMPLES // SAMPLES_PER_FRAME  # 32
STD_FLOOR = 1e-8

DUMP_MAGIC = b"A2FF"
DUMP_VERSION = 1
NORMALIZER_MAGIC = b"A2FN"
NORMALIZER_VERSION = 1


@dataclass(frozen=True)
class FeatureWindow:
    coeffs: np.ndarray
    frame_index: int

    def __post_init__(self) -> None:
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != WINDOW_ROWS:
            raise ShapeError(f"feature window must have {WINDOW_ROWS} rows, got shape {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise VoxblendError(f"non-finite feature values in window {self.frame_index}")

    @property
    def size(self) -> int:
        return int(self.coeffs.size)


def video_frame_count(clip: AudioClip) -> int:
    return clip.n_samples // SAMPLES_PER_FRAME


def _check_frame_index(clip: AudioClip, frame_index: int) -> None:
    count = video_frame_count(clip)
    if not 0 <= frame_index < count:
        raise FrameIndexError(f"frame index {frame_index} out of range [0, {count})")


def _padded_slice(samples: np.ndarray, start: int, length: int, origin: int = 0) -> np.ndarray:
    """Absolute samples ``[start, start+length)``; ``samples[0]`` sits at ``origin``.

    Anything outside the provided samples is zero.
    """
    out = np.zeros(length, dtype=np.float64)
    lo = max(start, origin)
    hi = min(start + length, origin + samples.size)
    if hi > lo:
        out[lo - start : hi - start] = samples[lo - origin : hi - origin]
    return out


def extract_raw_window(clip: AudioClip, frame_index: int) -> np.ndarray:
    _check_frame_index(clip, frame_index)
    start = frame_index * SAMPLES_PER_FRAME - CONTEXT_SAMPLES
    return _padded_slice(clip.samples, start, RAW_WINDOW_SAMPLES)


def _hz_to_mel(hz: np.ndarray) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg: FeatureConfig, sample_rate: int = 44_100) -> np.ndarray:
    """Triangular filters, shape ``(n_mel_filters, fft_size // 2 + 1)``."""
    edges_hz = _mel_to_hz(
        np.linspace(_hz_to_mel(np.float64(cfg.mel_low_hz)), _hz_to_mel(np.float64(cfg.mel_high_hz)), cfg.n_mel_filters + 2)
    )
    freqs = np.arange(cfg.fft_size // 2 + 1) * (sample_rate / cfg.fft_size)
    left, centre, right = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (freqs[None, :] - left) / (centre - left)
    falling = (right - freqs[None, :]) / (right - centre)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


@functools.lru_cache(maxsize=8)
def _analysis_window(length: int) -> np.ndarray:
    window = scipy.signal.windows.hann(length, sym=False)
    window.setflags(write=False)
    return window


def _check_frame(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    frame = np.asarray(samples, dtype=np.float64)
    if frame.shape != (cfg.frame_len_samples,):
        raise ShapeError(f"expected {cfg.frame_len_samples} samples, got shape {frame.shape}")
    return frame


def mfcc_frame(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    frame = _check_frame(samples, cfg)
    emphasized = np.append(frame[0], frame[1:] - cfg.preemphasis * frame[:-1])
    windowed = emphasized * _analysis_window(cfg.frame_len_samples)
    power = np.abs(scipy.fft.rfft(windowed, n=cfg.fft_size)) ** 2
    energies = mel_filterbank(cfg) @ power
    log_energies = np.log(np.maximum(energies, cfg.log_floor))
    return scipy.fft.dct(log_energies, type=2, norm="ortho")[: cfg.n_coeffs]


def autocorrelation(frame: np.ndarray, order: int) -> np.ndarray:
    n = frame.size
    return np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Solve the normal equations; returns prediction coefficients and residual energy.

    The predictor is ``x[n] ~ sum_k coeffs[k-1] * x[n-k]``.
    """
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = float(r[0])
    if err <= 0.0:
        return np.zeros(order), 0.0
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1 : 0 : -1])
        k = -acc / err
        a[1:i] = a[1:i] + k * a[i - 1 : 0 : -1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= r[0] * 1e-12:
            _trace(f"levinson stopped at order {i}: residual exhausted")
            break
    return -a[1:], err


def lpc_frame(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Autocorrelation-method LPC; an all-zero frame yields a zero vector."""
    frame = _check_frame(samples, cfg)
    r = autocorrelation(frame, cfg.lpc_order)
    coeffs, _ = levinson_durbin(r, cfg.lpc_order)
    return coeffs


def frame_coefficients(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    if cfg.feature_kind == "mfcc":
        return mfcc_frame(samples, cfg)
    return lpc_frame(samples, cfg)


def feature_window(clip: AudioClip, frame_index: int, cfg: FeatureConfig) -> FeatureWindow:
    raw = extract_raw_window(clip, frame_index)
    rows = [
        frame_coefficients(raw[k * cfg.hop_samples : k * cfg.hop_samples + cfg.frame_len_samples], cfg)
        for k in range(WINDOW_ROWS)
    ]
    return FeatureWindow(np.stack(rows), frame_index)


class FeatureExtractor:
    """Caches per-audio-frame coefficient rows on the global hop grid.

    ``samples[0]`` is absolute sample ``origin``; samples outside the provided
    span read as zero, so callers must only request rows whose samples are
    final (the streaming path guarantees this).
    """

    def __init__(self, cfg: FeatureConfig) -> None:
        if cfg.hop_samples != SAMPLES_PER_FRAME:
            raise VoxblendError(f"cached extraction requires hop {SAMPLES_PER_FRAME}, got {cfg.hop_samples}")
        self.cfg = cfg
        self._rows: dict[int, np.ndarray] = {}

    def row(self, j: int, samples: np.ndarray, origin: int = 0) -> np.ndarray:
        cached = self._rows.get(j)
        if cached is None:
            frame = _padded_slice(samples, j * SAMPLES_PER_FRAME, self.cfg.frame_len_samples, origin)
            cached = frame_coefficients(frame, self.cfg)
            self._rows[j] = cached
        return cached

    def window(self, frame_index: int, samples: np.ndarray, origin: int = 0) -> FeatureWindow:
        first = frame_index - CONTEXT_FRAMES
        rows = [self.row(first + k, samples, origin) for k in range(WINDOW_ROWS)]
        return FeatureWindow(np.stack(rows), frame_index)

    def prime(self, indices: Iterable[int], samples: np.ndarray, origin: int = 0, workers: int = 1) -> None:
        """Compute rows for ``indices`` up front, optionally on a thread pool."""
        todo = sorted(j for j in set(indices) if j not in self._rows)
        if not todo:
            return
        frames = (_padded_slice(samples, j * SAMPLES_PER_FRAME, self.cfg.frame_len_samples, origin) for j in todo)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(functools.partial(frame_coefficients, cfg=self.cfg), frames))
        else:
            results = [frame_coefficients(frame, self.cfg) for frame in frames]
        self._rows.update(zip(todo, results))

    def forget_before(self, j: int) -> None:
        for key in [k for k in self._rows if k < j]:
            del self._rows[key]

    def __len__(self) -> int:
        return len(self._rows)


def feature_windows(
    clip: AudioClip,
    cfg: FeatureConfig,
    indices: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Stack windows for ``indices`` (default: every frame) into ``(N, 64, cols)``."""
    if indices is None:
        indices = range(video_frame_count(clip))
    indices = list(indices)
    for t in indices:
        _check_frame_index(clip, t)
    if not indices:
        return np.zeros((0, WINDOW_ROWS, cfg.n_columns))
    extractor = FeatureExtractor(cfg)
    needed = {t - CONTEXT_FRAMES + k for t in indices for k in range(WINDOW_ROWS)}
    extractor.prime(needed, clip.samples, workers=workers or default_workers())
    _trace(f"feature_windows n={len(indices)} audio_frames={len(extractor)}")
    return np.stack([extractor.window(t, clip.samples).coeffs for t in indices])


def _split_f32(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hi = values.astype(np.float32)
    lo = (values - hi.astype(np.float64)).astype(np.float32)
    return hi, lo


@dataclass(frozen=True)
class Normalizer:
    """Per-coefficient z-score statistics.

    Statistics are held as float32 hi/lo pairs so that the checkpointed form
    reproduces the in-memory values exactly.
    """

    mean_hi: np.ndarray
    mean_lo: np.ndarray
    std_hi: np.ndarray
    std_lo: np.ndarray

    @classmethod
    def from_stats(cls, mean: np.ndarray, std: np.ndarray) -> "Normalizer":
        mean_hi, mean_lo = _split_f32(np.asarray(mean, dtype=np.float64))
        std_hi, std_lo = _split_f32(np.asarray(std, dtype=np.float64))
        return cls(mean_hi, mean_lo, std_hi, std_lo)

    @classmethod
    def identity(cls, n_columns: int) -> "Normalizer":
        return cls.from_stats(np.zeros(n_columns), np.ones(n_columns))

    @property
    def mean(self) -> np.ndarray:
        return self.mean_hi.astype(np.float64) + self.mean_lo.astype(np.float64)

    @property
    def std(self) -> np.ndarray:
        return self.std_hi.astype(np.float64) + self.std_lo.astype(np.float64)

    @property
    def n_columns(self) -> int:
        return int(self.mean_hi.size)

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "normalizer.mean_hi": self.mean_hi,
            "normalizer.mean_lo": self.mean_lo,
            "normalizer.std_hi": self.std_hi,
            "normalizer.std_lo": self.std_lo,
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "Normalizer":
        return cls(
            tensors["normalizer.mean_hi"],
            tensors["normalizer.mean_lo"],
            tensors["normalizer.std_hi"],
            tensors["normalizer.std_lo"],
        )


def _as_array(windows: Union[np.ndarray, Sequence[FeatureWindow]]) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows.reshape(-1, windows.shape[-1])
    return np.concatenate([w.coeffs for w in windows], axis=0) if len(windows) else np.zeros((0, 0))


def fit_normalizer(windows: Union[np.ndarray, Sequence[FeatureWindow]]) -> Normalizer:
    rows = _as_array(windows)
    if rows.size == 0:
        raise VoxblendError("cannot fit a normalizer on an empty collection")
    return Normalizer.from_stats(rows.mean(axis=0), rows.std(axis=0))


def apply_normalizer(window, normalizer: Normalizer):
    """z-score ``window`` (a FeatureWindow or an array ending in the coefficient axis).

    The std is floored at 1e-8, so a column that was constant during fitting
    maps its fitted value to 0.
    """
    coeffs = window.coeffs if isinstance(window, FeatureWindow) else np.asarray(window, dtype=np.float64)
    if coeffs.shape[-1] != normalizer.n_columns:
        raise ShapeError(f"normalizer has {normalizer.n_columns} columns, window has {coeffs.shape[-1]}")
    out = (coeffs - normalizer.mean) / np.maximum(normalizer.std, STD_FLOOR)
    if isinstance(window, FeatureWindow):
        return FeatureWindow(out, window.frame_index)
    return out


def save_normalizer(path: Union[str, Path], normalizer: Normalizer, cfg: Optional[FeatureConfig] = None) -> None:
    """Standalone normalizer file: ``A2FN`` header plus the checkpoint tensor table.

    With ``cfg`` the feature config the statistics were fitted under is stored
    alongside, so a later load can refuse statistics of another feature kind.
    """
    tensors = normalizer.tensors()
    if cfg is not None:
        tensors["config.feature"] = text_tensor(cfg.model_dump_json())
    with open(path, "wb") as fp:
        write_header(fp, NORMALIZER_MAGIC, NORMALIZER_VERSION)
        write_table(fp, tensors)
    _trace(f"wrote normalizer {path} cols={normalizer.n_columns}")


def load_normalizer(path: Union[str, Path], cfg: Optional[FeatureConfig] = None) -> Normalizer:
    """Read an ``A2FN`` file; with ``cfg``, raise NormalizerMismatch unless it was fitted under ``cfg``."""
    with open(path, "rb") as fp:
        read_header(fp, NORMALIZER_MAGIC, NORMALIZER_VERSION, "normalizer")
        tensors = dict(iter_table(fp))
    if cfg is not None:
        stored = tensors.get("config.feature")
        if stored is None:
            raise NormalizerMismatch(f"{path}: no feature config stored with the statistics")
        fitted = FeatureConfig.model_validate_json(tensor_text(stored))
        if fitted != cfg:
            raise NormalizerMismatch(f"{path}: fitted under {fitted.model_dump_json()}, requested {cfg.model_dump_json()}")
    try:
        return Normalizer.from_tensors(tensors)
    except KeyError as exc:
        raise FeatureDumpError(f"{path}: normalizer block {exc} missing") from None


def save_feature_dump(path: Union[str, Path], windows: np.ndarray) -> None:
    windows = np.asarray(windows)
    if windows.ndim != 3:
        raise ShapeError(f"feature dump needs (n, rows, cols), got {windows.shape}")
    n, rows, cols = windows.shape
    with open(path, "wb") as fp:
        write_header(fp, DUMP_MAGIC, DUMP_VERSION)
        write_u32(fp, n)
        write_u32(fp, rows)
        write_u32(fp, cols)
        fp.write(np.ascontiguousarray(windows, dtype="<f4").tobytes())
    _trace(f"wrote feature dump {path} n={n}")


def load_feature_dump(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fp:
        read_header(fp, DUMP_MAGIC, DUMP_VERSION, "feature dump", FeatureDumpError, FeatureDumpError, FeatureDumpError)
        n = read_u32(fp, "window count", FeatureDumpError)
        rows = read_u32(fp, "row count", FeatureDumpError)
        cols = read_u32(fp, "column count", FeatureDumpError)
        raw = read_exact(fp, 4 * n * rows * cols, "feature data", FeatureDumpError)
    return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n, rows, cols)
