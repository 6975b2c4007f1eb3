"""Sliding-window and streaming inference, blink overlay and rig retargeting.

Every path runs the same per-window pipeline (cached feature rows, z-score,
single-window forward), so offline and streaming outputs are bit-identical.
A frame t can be emitted once samples up to ``(t + 33) * 1470`` exist: its
window reaches 32 frames (47040 samples) past its own.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import (
    CONTEXT_SAMPLES,
    FPS,
    NATIVE_SCALE,
    N_BLENDSHAPES,
    SAMPLE_RATE,
    SAMPLES_PER_FRAME,
    WINDOW_ROWS,
    BlinkConfig,
    default_workers,
)
from .dataset import AnimTrack, DatasetManifest, load_track, write_param_csv
from .errors import RigMapError, ShapeError, VoxblendError
from .frontend import CONTEXT_FRAMES, FeatureExtractor, apply_normalizer, video_frame_count
from .network import BlendshapeFrame, model_forward
from .objectives import ComparisonTable, rmse
from .tracing import make_trace
from .trainer import Checkpoint, load_checkpoint
from .wav import AudioClip, load_wav

_trace = make_trace("inference")

PathLike = Union[str, Path]

LOOKAHEAD_SAMPLES = CONTEXT_SAMPLES
LOOKAHEAD_S = LOOKAHEAD_SAMPLES / SAMPLE_RATE  # 1.0667
FRAME_BUDGET_MS = 1000.0 / FPS  # 33.33
# rows of window t run up to audio frame t + 31, which ends at (t + 33) * 1470
_READY_FRAMES = CONTEXT_FRAMES + 1


@dataclass
class LatencyReport:
    """Per-window wall-clock costs plus a digest of everything emitted."""

    feat_ms: List[float] = field(default_factory=list)
    forward_ms: List[float] = field(default_factory=list)
    lookahead_s: float = LOOKAHEAD_S
    budget_ms: float = FRAME_BUDGET_MS
    _digest: "hashlib._Hash" = field(default_factory=hashlib.sha256, init=False, repr=False, compare=False)

    def record(self, feat_s: float, forward_s: float, frame: np.ndarray) -> None:
        self.feat_ms.append(feat_s * 1000.0)
        self.forward_ms.append(forward_s * 1000.0)
        self._digest.update(np.ascontiguousarray(frame, dtype="<f8").tobytes())

    @property
    def n_windows(self) -> int:
        return len(self.feat_ms)

    @property
    def window_ms(self) -> np.ndarray:
        return np.asarray(self.feat_ms) + np.asarray(self.forward_ms)

    def _stat(self, values: Sequence[float], kind: str) -> float:
        if not len(values):
            return 0.0
        values = np.asarray(values)
        if kind == "mean":
            return float(values.mean())
        if kind == "p95":
            return float(np.percentile(values, 95))
        return float(values.max())

    @property
    def mean_ms(self) -> float:
        return self._stat(self.window_ms, "mean")

    @property
    def p95_ms(self) -> float:
        return self._stat(self.window_ms, "p95")

    @property
    def max_ms(self) -> float:
        return self._stat(self.window_ms, "max")

    @property
    def realtime(self) -> bool:
        return self.n_windows > 0 and self.mean_ms < self.budget_ms

    @property
    def output_digest(self) -> str:
        return self._digest.hexdigest()

    def to_csv(self, path: PathLike) -> None:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["window", "feat_ms", "forward_ms"])
            for i, (feat, fwd) in enumerate(zip(self.feat_ms, self.forward_ms)):
                writer.writerow([i, f"{feat:.6f}", f"{fwd:.6f}"])

    def format_table(self) -> str:
        rows = [
            ("features", self.feat_ms),
            ("forward", self.forward_ms),
            ("window", list(self.window_ms)),
        ]
        lines = [f"{'stage':<10} {'mean_ms':>10} {'p95_ms':>10} {'max_ms':>10}"]
        for name, values in rows:
            lines.append(
                f"{name:<10} {self._stat(values, 'mean'):>10.4f} "
                f"{self._stat(values, 'p95'):>10.4f} {self._stat(values, 'max'):>10.4f}"
            )
        verdict = "pass" if self.realtime else "FAIL"
        lines.append(f"windows={self.n_windows} lookahead_s={self.lookahead_s:.4f} "
                     f"budget_ms={self.budget_ms:.2f} realtime={verdict}")
        lines.append(f"output_sha256={self.output_digest}")
        return "\n".join(lines)


class Animator:
    """A loaded checkpoint plus the per-window extract -> normalize -> forward step."""

    def __init__(self, ckpt: Checkpoint) -> None:
        if ckpt.feature_config.n_columns != ckpt.model_config.input_cols:
            raise ShapeError(
                f"checkpoint features have {ckpt.feature_config.n_columns} columns, "
                f"model expects {ckpt.model_config.input_cols}"
            )
        self.ckpt = ckpt

    @classmethod
    def load(cls, path: PathLike) -> "Animator":
        return cls(load_checkpoint(path))

    def extractor(self) -> FeatureExtractor:
        return FeatureExtractor(self.ckpt.feature_config)

    def frame(
        self,
        extractor: FeatureExtractor,
        t: int,
        samples: np.ndarray,
        origin: int = 0,
        report: Optional[LatencyReport] = None,
    ) -> BlendshapeFrame:
        start = time.perf_counter()
        window = apply_normalizer(extractor.window(t, samples, origin), self.ckpt.normalizer)
        mid = time.perf_counter()
        out = model_forward(window, self.ckpt.params).frames[0]
        end = time.perf_counter()
        if report is not None:
            report.record(mid - start, end - mid, out)
        return BlendshapeFrame(out)


def infer_track(
    clip: AudioClip,
    ckpt: Union[Checkpoint, Animator],
    workers: Optional[int] = None,
    report: Optional[LatencyReport] = None,
) -> AnimTrack:
    """One frame per video frame of ``clip``, evaluated window by window."""
    animator = ckpt if isinstance(ckpt, Animator) else Animator(ckpt)
    extractor = animator.extractor()
    n = video_frame_count(clip)
    workers = workers or default_workers()
    if workers > 1 and n:
        extractor.prime(range(-CONTEXT_FRAMES, n - CONTEXT_FRAMES + WINDOW_ROWS), clip.samples, workers=workers)
    frames = [animator.frame(extractor, t, clip.samples, report=report).params for t in range(n)]
    _trace(f"infer_track frames={n}")
    return AnimTrack(np.array(frames).reshape(n, N_BLENDSHAPES))


class StreamingAnimator:
    """Incremental inference: push sample blocks, receive frames as soon as they are final."""

    def __init__(self, ckpt: Union[Checkpoint, Animator], report: Optional[LatencyReport] = None) -> None:
        self.animator = ckpt if isinstance(ckpt, Animator) else Animator(ckpt)
        self.report = report if report is not None else LatencyReport()
        self._extractor = self.animator.extractor()
        self._buffer = np.zeros(0, dtype=np.float64)
        self._origin = 0  # absolute index of self._buffer[0]
        self._received = 0
        self._next = 0
        self._finished = False

    @property
    def emitted(self) -> int:
        return self._next

    def push(self, samples: np.ndarray) -> List[BlendshapeFrame]:
        if self._finished:
            raise VoxblendError("stream already finished")
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self._buffer = np.concatenate([self._buffer, samples])
        self._received += samples.size
        ready = self._received // SAMPLES_PER_FRAME - _READY_FRAMES
        return self._emit_until(ready)

    def finish(self) -> List[BlendshapeFrame]:
        """Flush remaining frames; audio past the end of the stream reads as silence."""
        self._finished = True
        return self._emit_until(self._received // SAMPLES_PER_FRAME - 1)

    def _emit_until(self, last: int) -> List[BlendshapeFrame]:
        out = []
        while self._next <= last:
            out.append(self.animator.frame(self._extractor, self._next, self._buffer, self._origin, self.report))
            self._next += 1
            self._trim()
        return out

    def _trim(self) -> None:
        first_row = self._next - CONTEXT_FRAMES
        self._extractor.forget_before(first_row)
        keep_from = max(first_row * SAMPLES_PER_FRAME, 0)
        drop = keep_from - self._origin
        if drop > 0:
            self._buffer = self._buffer[drop:]
            self._origin = keep_from


def clip_blocks(clip: AudioClip, block_size: int = SAMPLES_PER_FRAME) -> Iterator[np.ndarray]:
    """Feed a clip as consecutive blocks, as a live source would."""
    if block_size < 1:
        raise VoxblendError(f"block size must be positive, got {block_size}")
    for start in range(0, clip.n_samples, block_size):
        yield clip.samples[start : start + block_size]


class StreamSession:
    """Iterating yields frames in order; :meth:`report` covers everything emitted so far."""

    def __init__(self, source: Iterable[np.ndarray], animator: StreamingAnimator) -> None:
        self._source = source
        self._animator = animator

    def __iter__(self) -> Iterator[BlendshapeFrame]:
        for block in self._source:
            yield from self._animator.push(block)
        yield from self._animator.finish()

    def report(self) -> LatencyReport:
        return self._animator.report

    def track(self) -> AnimTrack:
        frames = [f.params for f in self]
        return AnimTrack(np.array(frames).reshape(len(frames), N_BLENDSHAPES))


def stream_infer(
    source: Union[AudioClip, Iterable[np.ndarray]],
    ckpt: Union[Checkpoint, Animator],
    block_size: int = SAMPLES_PER_FRAME,
) -> StreamSession:
    if isinstance(source, AudioClip):
        source = clip_blocks(source, block_size)
    return StreamSession(source, StreamingAnimator(ckpt))


def bench(ckpt: Union[Checkpoint, Animator], n_windows: int = 300, seed: int = 0) -> LatencyReport:
    """Stream ``n_windows`` frames of seeded noise, timing features and forward separately."""
    if n_windows < 1:
        raise VoxblendError(f"n_windows must be at least 1, got {n_windows}")
    rng = np.random.default_rng(seed)
    clip = AudioClip(rng.uniform(-0.5, 0.5, size=n_windows * SAMPLES_PER_FRAME))
    session = stream_infer(clip, ckpt)
    for _ in session:
        pass
    report = session.report()
    _trace(f"bench windows={report.n_windows} mean_ms={report.mean_ms:.4f}")
    return report


# ── blink overlay ──


def blink_pulse(duration_frames: int) -> np.ndarray:
    """Triangular open-close-open weights over ``duration_frames`` frames."""
    d = duration_frames
    k = np.arange(d, dtype=np.float64)
    centre = (d - 1) / 2.0
    return 1.0 - np.abs(k - centre) / ((d + 1) / 2.0)


def blink_starts(n_frames: int, cfg: BlinkConfig, seed: int = 0) -> List[int]:
    """Pulse start frames: one per period, each period jittered by up to ``cfg.jitter``."""
    rng = np.random.default_rng(seed)
    period = cfg.period_s * FPS
    starts = []
    t = 0.0
    while True:
        t += period * (1.0 + rng.uniform(-cfg.jitter, cfg.jitter)) if cfg.jitter else period
        start = int(round(t))
        if start >= n_frames:
            return starts
        starts.append(start)


def blink_inject(track: AnimTrack, cfg: BlinkConfig = BlinkConfig(), seed: int = 0) -> AnimTrack:
    """Overlay blink pulses with ``max(existing, amplitude * pulse)``; other parameters are untouched."""
    frames = np.array(track.frames)
    pulse = cfg.amplitude * blink_pulse(cfg.duration_frames)
    cols = [i - 1 for i in cfg.indices]
    for start in blink_starts(len(track), cfg, seed):
        span = pulse[: len(track) - start]
        rows = slice(start, start + span.size)
        frames[rows, cols] = np.maximum(frames[rows, cols], span[:, None])
    return AnimTrack(frames, track.fps)


# ── retargeting ──


@dataclass(frozen=True)
class RigMap:
    matrix: np.ndarray  # (target_dim, 51)
    offset: np.ndarray  # (target_dim,)

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.float64)
        offset = np.array(self.offset, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] != N_BLENDSHAPES:
            raise RigMapError(f"rig matrix must be (target_dim >= 1, {N_BLENDSHAPES}), got {matrix.shape}")
        if offset.shape != (matrix.shape[0],):
            raise RigMapError(f"rig offset must have {matrix.shape[0]} entries, got {offset.shape}")
        if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(offset))):
            raise RigMapError("rig map has non-finite coefficients")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "offset", offset)

    @property
    def target_dim(self) -> int:
        return int(self.matrix.shape[0])

    @classmethod
    def identity(cls) -> "RigMap":
        return cls(np.eye(N_BLENDSHAPES), np.zeros(N_BLENDSHAPES))


def load_rigmap(path: PathLike) -> RigMap:
    """CSV: first line ``target_dim``, then that many rows of 51 coefficients and an offset."""
    with open(path, newline="") as fp:
        rows = [r for r in csv.reader(fp) if r and any(c.strip() for c in r)]
    if not rows:
        raise RigMapError(f"{path}: empty rig map")
    try:
        target_dim = int(rows[0][0])
        table = np.array([[float(c) for c in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise RigMapError(f"{path}: {exc}") from None
    if target_dim < 1 or table.shape != (target_dim, N_BLENDSHAPES + 1):
        raise RigMapError(f"{path}: expected {target_dim} rows of {N_BLENDSHAPES + 1} values, got {table.shape}")
    return RigMap(table[:, :N_BLENDSHAPES], table[:, N_BLENDSHAPES])


def retarget(track: AnimTrack, rig: RigMap) -> np.ndarray:
    """Native-scale ``(n, target_dim)`` values ``clamp(M @ native + offset, 0, 100)``."""
    return np.clip(track.native @ rig.matrix.T + rig.offset, 0.0, NATIVE_SCALE)


def save_retargeted(path: PathLike, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeError(f"retargeted values must be (n, target_dim), got {values.shape}")
    write_param_csv(path, values)


# ── model comparison ──


def _clip_rmse(animator: Animator, clip: AudioClip, ref: AnimTrack) -> float:
    pred = infer_track(clip, animator)
    return rmse(pred.frames[: len(ref)], ref.frames)


def evaluate_models(
    checkpoints: Mapping[str, Union[Checkpoint, PathLike]],
    manifest: DatasetManifest,
    split: Optional[str] = None,
) -> ComparisonTable:
    """RMSE of every model on every (optionally split-filtered) manifest clip."""
    entries = [e for e in manifest.entries if split is None or e.split == split]
    if not entries:
        raise VoxblendError(f"no manifest entries for split {split!r}")
    data: List[Tuple[AudioClip, AnimTrack]] = [(load_wav(e.wav), load_track(e.track)) for e in entries]
    table = ComparisonTable([e.clip_id for e in entries])
    for name, ckpt in checkpoints.items():
        animator = Animator(ckpt) if isinstance(ckpt, Checkpoint) else Animator.load(ckpt)
        table.add(name, [_clip_rmse(animator, clip, ref) for clip, ref in data])
        _trace(f"evaluate_models {name} mean={table.mean(name):.4f}")
    return table
