from __future__ import annotations

import numpy as np
import pytest

from voxblend.dataset import load_manifest, load_track
from voxblend.errors import ShapeError, VoxblendError
from voxblend.synth import (
    Oracle,
    band_energies,
    load_oracle,
    oracle_track,
    save_oracle,
    synth_audio,
    synth_corpus,
    synth_generate,
)
from voxblend.wav import load_wav, save_wav


def test_same_seed_is_bit_identical() -> None:
    a = synth_generate(21, 3.0)
    b = synth_generate(21, 3.0)
    assert np.array_equal(a.clip.samples, b.clip.samples)
    assert np.array_equal(a.track.frames, b.track.frames)
    c = synth_generate(22, 3.0)
    assert not np.array_equal(a.clip.samples, c.clip.samples)


def test_one_minute_gives_1800_frames() -> None:
    result = synth_generate(0, 60.0)
    assert result.clip.n_samples == 1800 * 1470
    assert len(result.track) == 1800
    assert np.all((result.track.frames >= 0.0) & (result.track.frames <= 1.0))


def test_silence_reads_as_floor() -> None:
    assert np.allclose(band_energies(np.zeros(1470)), -1.0)
    with pytest.raises(ShapeError):
        band_energies(np.zeros(1000))


def test_gap_frames_hold_the_silence_value() -> None:
    result = synth_generate(3, 20.0)
    frames = result.clip.samples.reshape(-1, 1470)
    silent = np.flatnonzero(np.all(frames == 0.0, axis=1))
    assert silent.size >= 6
    expected = result.oracle.apply(np.full(8, -1.0))
    for t in silent:
        np.testing.assert_allclose(result.track.frames[t], expected, rtol=0, atol=1e-12)


def test_oracle_survives_a_wav_round_trip(tmp_path) -> None:
    result = synth_generate(5, 4.0)
    path = tmp_path / "s.wav"
    save_wav(path, result.clip)
    reread = oracle_track(load_wav(path), result.oracle)
    np.testing.assert_allclose(reread.frames, result.track.frames, rtol=0, atol=1e-6)


def test_audio_stays_in_range() -> None:
    clip = synth_audio(8, 5.0)
    assert 0.0 < np.max(np.abs(clip.samples)) <= 0.5 * (1.0 + 1.0 / 2.0 + 1.0 / 3.0) + 1e-4
    with pytest.raises(VoxblendError):
        synth_audio(8, 0.0)


def test_oracle_is_seeded_and_validated() -> None:
    assert np.array_equal(Oracle.from_seed(1).a, Oracle.from_seed(1).a)
    assert not np.array_equal(Oracle.from_seed(1).a, Oracle.from_seed(2).a)
    with pytest.raises(ShapeError):
        Oracle(np.zeros((51, 7)), np.zeros(51))


def test_oracle_sidecar_round_trip(tmp_path) -> None:
    oracle = Oracle.from_seed(9)
    path = tmp_path / "oracle.csv"
    save_oracle(path, oracle)
    lines = path.read_text().splitlines()
    assert lines[0] == "a1,a2,a3,a4,a5,a6,a7,a8,c"
    assert len(lines) == 52 and all(len(line.split(",")) == 9 for line in lines)
    loaded = load_oracle(path)
    assert np.array_equal(loaded.a, oracle.a)
    assert np.array_equal(loaded.c, oracle.c)


def test_corpus_layout(tmp_path) -> None:
    manifest = synth_corpus(seed=2, minutes=0.5, out_dir=tmp_path, clips=5)
    assert len(manifest) == 5
    assert sorted(e.split for e in manifest.entries) == ["train"] * 4 + ["val"]
    for name in ("manifest.txt", "oracle.csv", "synth_000.wav", "synth_004.csv"):
        assert (tmp_path / name).exists()
    reloaded = load_manifest(tmp_path / "manifest.txt")
    assert [e.clip_id for e in reloaded.entries] == [f"synth_{i:03d}" for i in range(5)]
    assert len(load_track(tmp_path / "synth_000.csv")) == 180
    oracle = load_oracle(tmp_path / "oracle.csv")
    assert np.array_equal(oracle.a, Oracle.from_seed(2).a)


def test_corpus_is_deterministic(tmp_path) -> None:
    synth_corpus(seed=6, minutes=0.1, out_dir=tmp_path / "a", clips=2)
    synth_corpus(seed=6, minutes=0.1, out_dir=tmp_path / "b", clips=2)
    for name in ("synth_000.wav", "synth_001.csv", "manifest.txt", "oracle.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
