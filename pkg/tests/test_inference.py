from __future__ import annotations

import numpy as np
import pytest

from conftest import noise, tone
from voxblend.config import BlinkConfig
from voxblend.dataset import AnimTrack, load_manifest
from voxblend.errors import RigMapError, ShapeError, VoxblendError
from voxblend.inference import (
    LOOKAHEAD_S,
    Animator,
    LatencyReport,
    RigMap,
    StreamingAnimator,
    bench,
    blink_inject,
    blink_pulse,
    blink_starts,
    evaluate_models,
    infer_track,
    load_rigmap,
    retarget,
    save_retargeted,
    stream_infer,
)
from voxblend.synth import synth_corpus, synth_generate
from voxblend.trainer import save_checkpoint
from voxblend.wav import AudioClip


def test_two_seconds_give_sixty_frames(tiny_checkpoint) -> None:
    clip = tone(220.0, 2.0)
    track = infer_track(clip, tiny_checkpoint)
    assert len(track) == 60
    assert np.all((track.frames >= 0.0) & (track.frames <= 1.0))
    assert np.array_equal(track.frames, infer_track(clip, tiny_checkpoint).frames)


@pytest.mark.parametrize("block_size", [1470, 1000, 4410, 7])
def test_streaming_matches_offline(tiny_checkpoint, block_size) -> None:
    clip = noise(12, 1.5)
    offline = infer_track(clip, tiny_checkpoint)
    streamed = stream_infer(clip, tiny_checkpoint, block_size=block_size).track()
    assert np.array_equal(streamed.frames, offline.frames)


@pytest.mark.parametrize("seed", range(10))
def test_streaming_matches_offline_on_synthetic_clips(tiny_checkpoint, seed) -> None:
    clip = synth_generate(seed, 1.2).clip
    block_size = int(np.random.default_rng(seed).integers(1, 5000))
    offline = infer_track(clip, tiny_checkpoint)
    streamed = stream_infer(clip, tiny_checkpoint, block_size=block_size).track()
    assert len(offline) == 36
    assert np.array_equal(streamed.frames, offline.frames)


def test_streaming_matches_offline_on_ragged_clip(tiny_checkpoint) -> None:
    clip = noise(13, 1.0 + 700 / 44_100)
    offline = infer_track(clip, tiny_checkpoint)
    streamed = stream_infer(clip, tiny_checkpoint, block_size=2048).track()
    assert len(offline) == 30
    assert np.array_equal(streamed.frames, offline.frames)


def test_first_frame_waits_for_lookahead(tiny_checkpoint) -> None:
    animator = StreamingAnimator(tiny_checkpoint)
    assert animator.push(np.zeros(33 * 1470 - 1)) == []
    emitted = animator.push(np.zeros(1))
    assert len(emitted) == 1 and animator.emitted == 1
    assert len(animator.push(np.zeros(1470))) == 1
    rest = animator.finish()
    assert animator.emitted == 34
    assert len(rest) == 32
    with pytest.raises(VoxblendError):
        animator.push(np.zeros(10))


def test_threaded_features_do_not_change_output(tiny_checkpoint) -> None:
    clip = noise(14, 1.0)
    one = infer_track(clip, tiny_checkpoint, workers=1)
    three = infer_track(clip, tiny_checkpoint, workers=3)
    assert np.array_equal(one.frames, three.frames)


def test_empty_clip_gives_empty_track(tiny_checkpoint) -> None:
    assert len(infer_track(AudioClip(np.zeros(1469)), tiny_checkpoint)) == 0


def test_animator_loads_from_disk(tmp_path, tiny_checkpoint) -> None:
    path = tmp_path / "m.a2fm"
    save_checkpoint(tiny_checkpoint, path)
    clip = tone(330.0, 0.5)
    assert np.array_equal(infer_track(clip, Animator.load(path)).frames, infer_track(clip, tiny_checkpoint).frames)


def test_latency_report(tmp_path) -> None:
    report = LatencyReport()
    report.record(0.001, 0.002, np.zeros(51))
    report.record(0.003, 0.004, np.ones(51))
    assert report.n_windows == 2
    assert report.mean_ms == pytest.approx(5.0)
    assert report.max_ms == pytest.approx(7.0)
    assert report.realtime
    assert report.lookahead_s == LOOKAHEAD_S
    assert f"{LOOKAHEAD_S:.4f}" == "1.0667"
    path = tmp_path / "lat.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "window,feat_ms,forward_ms" and len(lines) == 3
    table = report.format_table()
    assert "realtime=pass" in table and "lookahead_s=1.0667" in table
    assert not LatencyReport().realtime


def test_bench_counts_windows_and_is_reproducible(tiny_checkpoint) -> None:
    first = bench(tiny_checkpoint, n_windows=5, seed=2)
    second = bench(tiny_checkpoint, n_windows=5, seed=2)
    assert first.n_windows == 5
    assert len(first.forward_ms) == 5
    assert first.output_digest == second.output_digest
    assert first.output_digest != bench(tiny_checkpoint, n_windows=5, seed=3).output_digest
    with pytest.raises(VoxblendError):
        bench(tiny_checkpoint, n_windows=0)


def test_blink_schedule_without_jitter() -> None:
    cfg = BlinkConfig(jitter=0.0)
    assert blink_starts(600, cfg) == [120, 240, 360, 480]
    assert blink_starts(600, BlinkConfig(), seed=1) == blink_starts(600, BlinkConfig(), seed=1)


def test_blink_pulse_shape() -> None:
    pulse = blink_pulse(5)
    np.testing.assert_allclose(pulse, [1 / 3, 2 / 3, 1.0, 2 / 3, 1 / 3])
    assert np.all(blink_pulse(6) > 0.0)


def test_blink_only_touches_blink_parameters(rng) -> None:
    track = AnimTrack(rng.uniform(0.0, 0.3, size=(300, 51)))
    blinked = blink_inject(track, BlinkConfig(jitter=0.0))
    others = [i for i in range(51) if i not in (0, 1)]
    assert np.array_equal(blinked.frames[:, others], track.frames[:, others])
    assert blinked.frames[120:126, 0].max() == pytest.approx(1.0 - 0.5 / 3.5)
    assert np.all(blinked.frames[:, :2] >= track.frames[:, :2])
    unchanged = blink_inject(track, BlinkConfig(amplitude=0.0))
    assert np.array_equal(unchanged.frames, track.frames)


def test_retarget_identity_constant_and_clamp(rng) -> None:
    track = AnimTrack(rng.uniform(size=(4, 51)))
    np.testing.assert_allclose(retarget(track, RigMap.identity()), track.native, atol=1e-12)
    assert np.all(retarget(track, RigMap(np.zeros((3, 51)), np.full(3, 50.0))) == 50.0)
    assert np.all(retarget(track, RigMap(np.zeros((2, 51)), np.full(2, 200.0))) == 100.0)


def test_rigmap_validation() -> None:
    with pytest.raises(RigMapError):
        RigMap(np.zeros((3, 50)), np.zeros(3))
    with pytest.raises(RigMapError):
        RigMap(np.zeros((3, 51)), np.zeros(2))


def test_load_rigmap(tmp_path) -> None:
    path = tmp_path / "rig.csv"
    rows = ["2", ",".join(["1"] + ["0"] * 50 + ["5"]), ",".join(["0", "2"] + ["0"] * 49 + ["0"])]
    path.write_text("\n".join(rows) + "\n")
    rig = load_rigmap(path)
    assert rig.target_dim == 2
    values = retarget(AnimTrack(np.full((1, 51), 0.2)), rig)
    np.testing.assert_allclose(values, [[25.0, 40.0]])
    out = tmp_path / "out.csv"
    save_retargeted(out, values)
    assert out.read_text().splitlines()[0] == "frame,p01,p02"
    with pytest.raises(ShapeError):
        save_retargeted(out, np.zeros(3))

    path.write_text("3\n" + rows[1] + "\n")
    with pytest.raises(RigMapError, match="expected 3 rows"):
        load_rigmap(path)
    path.write_text("two\n")
    with pytest.raises(RigMapError):
        load_rigmap(path)


def test_evaluate_models_builds_a_table(tmp_path, tiny_checkpoint) -> None:
    synth_corpus(seed=1, minutes=0.05, out_dir=tmp_path, clips=2)
    manifest = load_manifest(tmp_path / "manifest.txt")
    model_path = tmp_path / "tiny.a2fm"
    save_checkpoint(tiny_checkpoint, model_path)
    table = evaluate_models({"tiny": model_path, "same": tiny_checkpoint}, manifest)
    assert table.columns == ["synth_000", "synth_001"]
    assert table.rows["tiny"] == table.rows["same"]
    assert all(0.0 < v < 1.0 for v in table.rows["tiny"])
    only_val = evaluate_models({"tiny": tiny_checkpoint}, manifest, split="val")
    assert len(only_val.columns) == 1
