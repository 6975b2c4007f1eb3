"""Seeded pseudo-speech with an audio-measurable blendshape oracle.

Audio is three harmonics of a smooth pitch contour (80-300 Hz) under a
smooth amplitude envelope with frame-aligned silence gaps. The target track
is a fixed function of each frame's 1470 samples: eight log-band energies
pushed through ``sigmoid(a @ e + c)`` with seeded ``a`` (51x8) and ``c`` (51).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.fft
import scipy.interpolate
import scipy.special

from .config import FPS, N_BLENDSHAPES, SAMPLE_RATE, SAMPLES_PER_FRAME
from .dataset import AnimTrack, DatasetManifest, ManifestEntry, save_manifest, save_track, split
from .errors import ShapeError, VoxblendError
from .tracing import make_trace
from .wav import AudioClip, quantize_pcm16, save_wav

_trace = make_trace("synth")

PathLike = Union[str, Path]

N_BANDS = 8
BAND_LOW_HZ = 80.0
BAND_HIGH_HZ = 8000.0
ENERGY_FLOOR = 1e-10
PITCH_RANGE_HZ = (80.0, 300.0)


@dataclass(frozen=True)
class Oracle:
    a: np.ndarray  # (51, 8)
    c: np.ndarray  # (51,)

    def __post_init__(self) -> None:
        if self.a.shape != (N_BLENDSHAPES, N_BANDS) or self.c.shape != (N_BLENDSHAPES,):
            raise ShapeError(f"oracle needs a (51, 8) and c (51,), got {self.a.shape} and {self.c.shape}")

    @classmethod
    def from_seed(cls, seed: int) -> "Oracle":
        rng = np.random.default_rng([seed, 0x0AC1E])
        return cls(rng.normal(0.0, 1.0, size=(N_BLENDSHAPES, N_BANDS)), rng.normal(0.0, 0.5, size=N_BLENDSHAPES))

    def apply(self, energies: np.ndarray) -> np.ndarray:
        return scipy.special.expit(energies @ self.a.T + self.c)


def _band_edges() -> np.ndarray:
    return np.geomspace(BAND_LOW_HZ, BAND_HIGH_HZ, N_BANDS + 1)


def band_energies(frame: np.ndarray) -> np.ndarray:
    """Eight scaled log-band energies of one 1470-sample frame.

    Each band's rfft power sum maps to ``(log10(E + 1e-10) + 5) / 5``, so a
    silent frame reads -1 in every band.
    """
    if frame.shape != (SAMPLES_PER_FRAME,):
        raise ShapeError(f"oracle frame must have {SAMPLES_PER_FRAME} samples, got shape {frame.shape}")
    power = np.abs(scipy.fft.rfft(frame)) ** 2
    freqs = scipy.fft.rfftfreq(SAMPLES_PER_FRAME, d=1.0 / SAMPLE_RATE)
    edges = _band_edges()
    bands = np.array([power[(freqs >= lo) & (freqs < hi)].sum() for lo, hi in zip(edges[:-1], edges[1:])])
    return (np.log10(bands + ENERGY_FLOOR) + 5.0) / 5.0


def oracle_track(clip: AudioClip, oracle: Oracle) -> AnimTrack:
    n_frames = clip.n_samples // SAMPLES_PER_FRAME
    frames = clip.samples[: n_frames * SAMPLES_PER_FRAME].reshape(n_frames, SAMPLES_PER_FRAME)
    energies = np.array([band_energies(f) for f in frames]).reshape(n_frames, N_BANDS)
    return AnimTrack(oracle.apply(energies))


def _smooth_noise(rng: np.random.Generator, n: int, knot_spacing: int, low: float, high: float) -> np.ndarray:
    n_knots = n // knot_spacing + 3
    knots = rng.uniform(low, high, size=n_knots)
    spline = scipy.interpolate.CubicSpline(np.arange(n_knots) * knot_spacing, knots)
    return np.clip(spline(np.arange(n)), low, high)


def _gap_mask(rng: np.random.Generator, n_frames: int) -> np.ndarray:
    """Per-video-frame voicing mask with silence gaps of 6-18 frames every 30-90 frames."""
    mask = np.ones(n_frames)
    t = int(rng.integers(30, 90))
    while t < n_frames:
        length = int(rng.integers(6, 19))
        mask[t : t + length] = 0.0
        t += length + int(rng.integers(30, 90))
    return mask


def synth_audio(seed: int, duration_s: float) -> AudioClip:
    if duration_s <= 0:
        raise VoxblendError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng([seed, 0x5A7D])
    n_frames = int(round(duration_s * FPS))
    n = n_frames * SAMPLES_PER_FRAME
    pitch = _smooth_noise(rng, n, SAMPLE_RATE // 4, *PITCH_RANGE_HZ)
    envelope = _smooth_noise(rng, n, SAMPLE_RATE // 10, 0.05, 1.0)
    voiced = np.repeat(_gap_mask(rng, n_frames), SAMPLES_PER_FRAME)
    tilt = _smooth_noise(rng, n, SAMPLE_RATE // 8, 0.1, 1.0)
    phase = 2.0 * np.pi * np.cumsum(pitch) / SAMPLE_RATE
    wave = np.sin(phase) + tilt * np.sin(2.0 * phase) / 2.0 + tilt**2 * np.sin(3.0 * phase) / 3.0
    signal = 0.5 * envelope * voiced * wave
    # snap to the PCM16 grid so the oracle survives a WAV round trip
    return AudioClip(quantize_pcm16(signal).astype(np.float64) / 32768.0)


@dataclass(frozen=True)
class SynthResult:
    clip: AudioClip
    track: AnimTrack
    oracle: Oracle


def synth_generate(seed: int, duration_s: float, oracle: Union[Oracle, None] = None) -> SynthResult:
    clip = synth_audio(seed, duration_s)
    oracle = oracle or Oracle.from_seed(seed)
    track = oracle_track(clip, oracle)
    _trace(f"synth seed={seed} duration={duration_s}s frames={len(track)}")
    return SynthResult(clip, track, oracle)


def save_oracle(path: PathLike, oracle: Oracle) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow([f"a{i}" for i in range(1, N_BANDS + 1)] + ["c"])
        for row, c in zip(oracle.a, oracle.c):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(c))])


def load_oracle(path: PathLike) -> Oracle:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        next(reader, None)
        rows = [[float(v) for v in record] for record in reader if record]
    table = np.array(rows, dtype=np.float64)
    if table.shape != (N_BLENDSHAPES, N_BANDS + 1):
        raise ShapeError(f"oracle sidecar must be {N_BLENDSHAPES}x{N_BANDS + 1}, got {table.shape}")
    return Oracle(table[:, :N_BANDS], table[:, N_BANDS])


def synth_corpus(seed: int, minutes: float, out_dir: PathLike, clips: int = 1, val_ratio: float = 0.2) -> DatasetManifest:
    """Write ``clips`` WAV/CSV pairs sharing one oracle, plus ``oracle.csv`` and ``manifest.txt``."""
    if clips < 1:
        raise VoxblendError(f"need at least one clip, got {clips}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    oracle = Oracle.from_seed(seed)
    duration = minutes * 60.0 / clips
    entries = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(clips)):
        clip_seed = int(child.generate_state(1)[0])
        result = synth_generate(clip_seed, duration, oracle)
        wav_path, csv_path = out / f"synth_{i:03d}.wav", out / f"synth_{i:03d}.csv"
        save_wav(wav_path, result.clip)
        save_track(csv_path, result.track)
        entries.append(ManifestEntry(wav_path, csv_path, "train"))
    save_oracle(out / "oracle.csv", oracle)
    manifest = DatasetManifest(tuple(entries))
    if clips >= 2:
        train, val = split(manifest, 1.0 - val_ratio, seed)
        manifest = DatasetManifest(tuple(sorted(train.entries + val.entries, key=lambda e: e.wav.name)))
    save_manifest(out / "manifest.txt", manifest)
    _trace(f"synth corpus {out} clips={clips} minutes={minutes}")
    return manifest
