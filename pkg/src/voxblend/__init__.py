"""Top-level package for voxblend: audio-driven blendshape animation."""

from __future__ import annotations

from importlib import metadata

from .config import BlinkConfig, FeatureConfig, LossConfig, ModelConfig, TrainConfig
from .errors import VoxblendError
from .wav import AudioClip, load_wav, save_wav

__all__ = [
    "__version__",
    "AudioClip",
    "BlinkConfig",
    "FeatureConfig",
    "LossConfig",
    "ModelConfig",
    "TrainConfig",
    "VoxblendError",
    "load_wav",
    "save_wav",
]

try:
    __version__ = metadata.version("voxblend")
except metadata.PackageNotFoundError:  # pragma: no cover - package not installed
    __version__ = "0.0.0"
