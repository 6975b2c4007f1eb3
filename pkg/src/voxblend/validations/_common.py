"""Shared setup for the validation drivers."""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from ..config import FeatureConfig, LossConfig, ModelConfig, TrainConfig
from ..dataset import PreparedData, SampleSet, build_sample_set, load_manifest, prepare_data
from ..frontend import Normalizer, fit_normalizer
from ..network import ModelParams
from ..objectives import jitter
from ..synth import synth_corpus, synth_generate
from ..trainer import predict


def single_clip_set(seed: int, frames: int, cfg: FeatureConfig = FeatureConfig()) -> tuple[SampleSet, Normalizer]:
    """Normalized samples for one synthetic clip of ``frames`` video frames, plus the normalizer."""
    result = synth_generate(seed, frames / 30.0)
    raw = build_sample_set(result.clip, result.track, cfg, f"synth{seed}")
    normalizer = fit_normalizer(raw.features)
    return raw.normalized(normalizer), normalizer


def corpus_data(
    seed: int,
    minutes: float,
    clips: int,
    val_ratio: float = 0.2,
    work_dir: Optional[Path] = None,
    cfg: FeatureConfig = FeatureConfig(),
) -> PreparedData:
    """Write a synthetic corpus and load it with a clip-level train/val split.

    Without ``work_dir`` the corpus lives in a temporary directory that is
    removed once the samples are in memory.
    """
    if work_dir is None:
        with tempfile.TemporaryDirectory(prefix="voxblend-") as tmp:
            return corpus_data(seed, minutes, clips, val_ratio, Path(tmp), cfg)
    synth_corpus(seed, minutes, work_dir, clips=clips, val_ratio=val_ratio)
    return prepare_data(load_manifest(work_dir / "manifest.txt"), cfg, val_ratio, seed)


def train_config(
    hidden: int,
    epochs: int,
    seed: int,
    lr: float,
    w2: float = 0.5,
    bidirectional: bool = True,
    use_attention: bool = True,
    batch_size: int = 100,
) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=lr,
        seed=seed,
        loss=LossConfig(w2=w2),
        model=ModelConfig(
            hidden_size=hidden,
            basis_size=min(128, 4 * hidden),
            bidirectional=bidirectional,
            use_attention=use_attention,
        ),
    )


def mean_run_jitter(params: ModelParams, samples: SampleSet) -> float:
    """Average jitter of predictions over every clip run with at least two frames."""
    pred = predict(params, samples.features)
    values = [jitter(pred[start : start + length]) for start, length in samples.runs() if length >= 2]
    return float(np.mean(values)) if values else 0.0


def majority(flags: list[bool]) -> bool:
    return sum(flags) * 2 > len(flags)
