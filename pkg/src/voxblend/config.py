"""Validated configuration models.

Every config is a frozen pydantic model; defaults mirror the training recipe
(44.1 kHz audio, 30 FPS animation, 64x39 feature windows, 51 blendshapes).
"""

from __future__ import annotations

import os
from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SAMPLE_RATE = 44_100
FPS = 30
SAMPLES_PER_FRAME = SAMPLE_RATE // FPS  # 1470
WINDOW_ROWS = 64
CONTEXT_SAMPLES = 32 * SAMPLES_PER_FRAME  # 47040 on each side
RAW_WINDOW_SAMPLES = 2 * CONTEXT_SAMPLES + SAMPLES_PER_FRAME  # 95550
N_BLENDSHAPES = 51
NATIVE_SCALE = 100.0

WORKERS_ENV = "VOXBLEND_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1") or "1"
    try:
        return max(int(value), 1)
    except ValueError:
        return 1


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FeatureConfig(_Frozen):
    feature_kind: Literal["mfcc", "lpc"] = "mfcc"
    n_coeffs: int = Field(39, ge=1)
    frame_len_samples: int = Field(2940, ge=2)
    hop_samples: int = Field(1470, ge=1)
    fft_size: int = Field(4096, ge=2)
    n_mel_filters: int = Field(40, ge=1)
    preemphasis: float = Field(0.97, ge=0.0, lt=1.0)
    lpc_order: int = Field(39, ge=1)
    mel_low_hz: float = Field(0.0, ge=0.0)
    mel_high_hz: float = Field(8000.0, gt=0.0)
    log_floor: float = Field(1e-10, gt=0.0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "FeatureConfig":
        if self.frame_len_samples != 2 * self.hop_samples:
            raise ValueError(
                f"frame_len_samples ({self.frame_len_samples}) must be 2*hop_samples ({self.hop_samples})"
            )
        if self.feature_kind == "mfcc" and self.n_coeffs > self.n_mel_filters:
            raise ValueError(f"n_coeffs ({self.n_coeffs}) exceeds n_mel_filters ({self.n_mel_filters})")
        if self.fft_size < self.frame_len_samples:
            raise ValueError(f"fft_size ({self.fft_size}) shorter than frame ({self.frame_len_samples})")
        if self.mel_high_hz <= self.mel_low_hz or self.mel_high_hz > SAMPLE_RATE / 2:
            raise ValueError("mel band edges must satisfy low < high <= Nyquist")
        return self

    @property
    def n_columns(self) -> int:
        return self.n_coeffs if self.feature_kind == "mfcc" else self.lpc_order


class ModelConfig(_Frozen):
    hidden_size: int = Field(256, gt=0)
    basis_size: int = Field(128, gt=0)
    bidirectional: bool = True
    use_attention: bool = True
    input_rows: int = Field(WINDOW_ROWS, gt=0)
    input_cols: int = Field(39, gt=0)
    output_size: int = N_BLENDSHAPES

    @field_validator("output_size")
    @classmethod
    def _fixed_output(cls, value: int) -> int:
        if value != N_BLENDSHAPES:
            raise ValueError(f"output_size must be {N_BLENDSHAPES}")
        return value


class LossConfig(_Frozen):
    w1: float = Field(1.0, ge=0.0)
    w2: float = Field(0.5, ge=0.0)
    delta: float = Field(1.0, gt=0.0)
    target_kind: Literal["huber", "mse", "mae"] = "huber"


class TrainConfig(_Frozen):
    epochs: int = Field(500, ge=1)
    batch_size: int = Field(100, ge=1)
    learning_rate: float = Field(1e-4, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = Field(1e-8, gt=0.0)
    seed: int = 0
    sequence_chunk: int = Field(8, ge=2)
    clip_norm: float = Field(5.0, gt=0.0)
    loss: LossConfig = LossConfig()
    model: ModelConfig = ModelConfig()

    @field_validator("betas")
    @classmethod
    def _check_betas(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError(f"adam betas must lie in [0, 1), got {value}")
        return value


class BlinkConfig(_Frozen):
    indices: Tuple[int, ...] = (1, 2)
    period_s: float = Field(4.0, gt=0.0)
    duration_frames: int = Field(6, ge=1)
    amplitude: float = Field(1.0, ge=0.0, le=1.0)
    jitter: float = Field(0.1, ge=0.0, lt=1.0)

    @field_validator("indices")
    @classmethod
    def _check_indices(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("at least one blink index is required")
        bad = [i for i in value if not 1 <= i <= N_BLENDSHAPES]
        if bad:
            raise ValueError(f"blink indices out of 1..{N_BLENDSHAPES}: {bad}")
        return value
