"""Exception hierarchy shared by every voxblend module."""

from __future__ import annotations

from typing import Optional


class VoxblendError(RuntimeError):
    """Root of all errors raised deliberately by voxblend."""


class WavFormatError(VoxblendError):
    """Raised when a WAV file cannot be parsed or is not PCM16 mono 44.1 kHz."""


class UnsupportedSampleRate(WavFormatError):
    pass


class UnsupportedChannelCount(WavFormatError):
    pass


class UnsupportedBitDepth(WavFormatError):
    pass


class TruncatedWav(WavFormatError):
    pass


class ShapeError(VoxblendError, ValueError):
    """Raised on tensor or vector shape mismatches."""


class FrameIndexError(VoxblendError, IndexError):
    """Raised when a video frame index is outside the clip."""


class TrackFormatError(VoxblendError):
    """Raised for malformed blendshape track CSV files."""

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ManifestError(VoxblendError):
    pass


class FeatureDumpError(VoxblendError):
    pass


class NormalizerMismatch(FeatureDumpError):
    """Raised when stored normalizer statistics were fitted under another feature config."""


class CheckpointError(VoxblendError):
    pass


class NotACheckpoint(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class RigMapError(VoxblendError):
    pass


class TrainingDivergedError(VoxblendError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, epoch: int, batch: int, value: float) -> None:
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
