"""RIFF/WAVE PCM16 mono 44.1 kHz reader and writer."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .config import SAMPLE_RATE
from .errors import (
    ShapeError,
    TruncatedWav,
    UnsupportedBitDepth,
    UnsupportedChannelCount,
    UnsupportedSampleRate,
    WavFormatError,
)
from .tracing import make_trace

_trace = make_trace("wav")

PathLike = Union[str, Path]

_PCM = 1
_EXTENSIBLE = 0xFFFE
# WAVE_FORMAT_EXTENSIBLE sub-format GUID after its 2-byte format tag
_GUID_TAIL = bytes.fromhex("000000001000800000aa00389b71")
_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """Mono samples in [-1, 1] at 44.1 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    n_samples: int = field(init=False)

    def __post_init__(self) -> None:
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"audio samples must be 1-D, got shape {samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedSampleRate(f"unsupported sample rate: {self.sample_rate} Hz (need {SAMPLE_RATE})")
        if samples.size and (not np.all(np.isfinite(samples)) or np.max(np.abs(samples)) > 1.0):
            raise WavFormatError("audio samples must be finite and within [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "n_samples", int(samples.size))

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


def _read_exact(fp: BinaryIO, n: int, what: str) -> bytes:
    data = fp.read(n)
    if len(data) != n:
        raise TruncatedWav(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def _parse_fmt(body: bytes) -> tuple[int, int, int]:
    if len(body) < 16:
        raise TruncatedWav(f"fmt chunk too short: {len(body)} bytes")
    audio_format, channels, rate, _byte_rate, _align, bits = struct.unpack("<HHIIHH", body[:16])
    if audio_format == _EXTENSIBLE:
        if len(body) < 40:
            raise TruncatedWav(f"extensible fmt chunk too short: {len(body)} bytes")
        subformat = body[24:40]
        if subformat != struct.pack("<H", _PCM) + _GUID_TAIL:
            raise WavFormatError(f"unsupported extensible subformat {subformat.hex()} (only PCM)")
    elif audio_format != _PCM:
        raise WavFormatError(f"unsupported audio format tag {audio_format:#x} (only PCM)")
    return channels, rate, bits


def read_wav(fp: BinaryIO) -> AudioClip:
    riff = _read_exact(fp, 12, "RIFF header")
    if riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")

    fmt: tuple[int, int, int] | None = None
    while True:
        header = fp.read(8)
        if len(header) == 0:
            raise TruncatedWav("truncated file: no data chunk")
        if len(header) < 8:
            raise TruncatedWav("truncated file inside chunk header")
        chunk_id, size = header[:4], struct.unpack("<I", header[4:])[0]
        _trace(f"chunk {chunk_id!r} size={size}")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(_read_exact(fp, size + (size & 1), "fmt chunk"))
            channels, rate, bits = fmt
            if channels != 1:
                raise UnsupportedChannelCount(f"unsupported channel count: {channels} (need mono)")
            if rate != SAMPLE_RATE:
                raise UnsupportedSampleRate(f"unsupported sample rate: {rate} Hz (need {SAMPLE_RATE})")
            if bits != 16:
                raise UnsupportedBitDepth(f"unsupported bit depth: {bits} (need 16)")
        elif chunk_id == b"data":
            if fmt is None:
                raise WavFormatError("data chunk precedes fmt chunk")
            if size % 2:
                raise WavFormatError(f"data chunk length {size} is not a whole number of samples")
            raw = _read_exact(fp, size, "data chunk")
            pcm = np.frombuffer(raw, dtype="<i2")
            return AudioClip(pcm.astype(np.float64) / _PCM_SCALE)
        else:
            _read_exact(fp, size + (size & 1), f"chunk {chunk_id!r}")


def load_wav(path: PathLike) -> AudioClip:
    with open(path, "rb") as fp:
        clip = read_wav(fp)
    _trace(f"loaded {path} n_samples={clip.n_samples}")
    return clip


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Return int16 codes for samples in [-1, 1]; exact inverse of the loader's scaling."""
    codes = np.round(np.asarray(samples, dtype=np.float64) * _PCM_SCALE)
    return np.clip(codes, -32768, 32767).astype("<i2")


def save_wav(path: PathLike, clip: AudioClip) -> None:
    pcm = quantize_pcm16(clip.samples).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        _PCM,
        1,
        SAMPLE_RATE,
        SAMPLE_RATE * 2,
        2,
        16,
        b"data",
        len(pcm),
    )
    with open(path, "wb") as fp:
        fp.write(header)
        fp.write(pcm)
    _trace(f"wrote {path} n_samples={clip.n_samples}")
