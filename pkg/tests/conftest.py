from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.append(str(SRC))

from voxblend.config import FeatureConfig, ModelConfig
from voxblend.frontend import Normalizer
from voxblend.network import init_params
from voxblend.trainer import Checkpoint
from voxblend.wav import AudioClip


def tone(freq_hz: float, seconds: float, amplitude: float = 0.5) -> AudioClip:
    n = int(round(seconds * 44_100))
    return AudioClip(amplitude * np.sin(2.0 * np.pi * freq_hz * np.arange(n) / 44_100))


def noise(seed: int, seconds: float, amplitude: float = 0.3) -> AudioClip:
    n = int(round(seconds * 44_100))
    return AudioClip(np.random.default_rng(seed).uniform(-amplitude, amplitude, size=n))


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(hidden_size=3, basis_size=4)


@pytest.fixture
def tiny_checkpoint(tiny_config: ModelConfig) -> Checkpoint:
    feature_cfg = FeatureConfig()
    return Checkpoint(init_params(tiny_config, seed=3), feature_cfg, Normalizer.identity(feature_cfg.n_columns))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
