"""Paired audio / blendshape data: track CSVs, manifests, samples and splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Sequence, Union

import numpy as np

from .config import FPS, N_BLENDSHAPES, NATIVE_SCALE, FeatureConfig
from .errors import ManifestError, NormalizerMismatch, ShapeError, TrackFormatError, VoxblendError
from .frontend import (
    Normalizer,
    apply_normalizer,
    feature_windows,
    fit_normalizer,
    load_normalizer,
    save_normalizer,
    video_frame_count,
)
from .tracing import logger, make_trace
from .wav import AudioClip, load_wav

_trace = make_trace("dataset")

PathLike = Union[str, Path]
SplitTag = Literal["train", "val"]


@dataclass(frozen=True)
class AnimTrack:
    """Blendshape frames at 30 FPS on the internal [0, 1] scale (``(n, 51)``)."""

    frames: np.ndarray
    fps: int = FPS

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.float64)
        if frames.size == 0:
            frames = frames.reshape(0, N_BLENDSHAPES)
        if frames.ndim != 2 or frames.shape[1] != N_BLENDSHAPES:
            raise ShapeError(f"track frames must be (n, {N_BLENDSHAPES}), got shape {frames.shape}")
        if self.fps != FPS:
            raise VoxblendError(f"track fps must be {FPS}, got {self.fps}")
        if frames.size and (not np.all(np.isfinite(frames)) or frames.min() < 0.0 or frames.max() > 1.0):
            raise VoxblendError("track parameters must lie within [0, 1]")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def native(self) -> np.ndarray:
        return self.frames * NATIVE_SCALE


def _param_header(n_params: int) -> list[str]:
    width = max(2, len(str(n_params)))
    return ["frame"] + [f"p{i:0{width}d}" for i in range(1, n_params + 1)]


def write_param_csv(path: PathLike, native_values: np.ndarray) -> None:
    """Write ``(n, d)`` native-scale values as ``frame,p01,...`` with 4 decimals."""
    values = np.asarray(native_values, dtype=np.float64)
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(_param_header(values.shape[1]))
        for i, row in enumerate(values):
            writer.writerow([i] + [f"{v:.4f}" for v in row])


def save_track(path: PathLike, track: AnimTrack) -> None:
    write_param_csv(path, track.native)
    _trace(f"wrote track {path} frames={len(track)}")


def load_track(path: PathLike) -> AnimTrack:
    rows: list[list[float]] = []
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None:
            raise TrackFormatError("empty track file", row=1)
        if [h.strip() for h in header] != _param_header(N_BLENDSHAPES):
            raise TrackFormatError(f"bad header, expected frame,p01..p{N_BLENDSHAPES}", row=1)
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != N_BLENDSHAPES + 1:
                raise TrackFormatError(f"wrong column count {len(record)} (need {N_BLENDSHAPES + 1})", row=line_no)
            try:
                frame = int(record[0])
                values = [float(v) for v in record[1:]]
            except ValueError as exc:
                raise TrackFormatError(f"unparseable value: {exc}", row=line_no) from None
            if frame != len(rows):
                raise TrackFormatError(f"non-monotonic frame index {frame} (expected {len(rows)})", row=line_no)
            bad = [v for v in values if not 0.0 <= v <= NATIVE_SCALE]
            if bad:
                raise TrackFormatError(f"value {bad[0]} outside [0, {NATIVE_SCALE:g}]", row=line_no)
            rows.append(values)
    native = np.array(rows, dtype=np.float64).reshape(-1, N_BLENDSHAPES)
    _trace(f"loaded track {path} frames={native.shape[0]}")
    return AnimTrack(native / NATIVE_SCALE)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray  # (64, cols), normalized
    target: np.ndarray  # (51,) in [0, 1]
    clip_id: str
    frame_index: int


@dataclass(frozen=True)
class SampleSet:
    """Stacked samples in source order."""

    features: np.ndarray  # (n, 64, cols)
    targets: np.ndarray  # (n, 51)
    clip_ids: tuple[str, ...]
    frame_indices: np.ndarray  # (n,)

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @classmethod
    def empty(cls, n_columns: int) -> "SampleSet":
        return cls(np.zeros((0, 64, n_columns)), np.zeros((0, N_BLENDSHAPES)), (), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleSet":
        if not samples:
            raise VoxblendError("cannot stack an empty sample list")
        return cls(
            np.stack([s.features for s in samples]),
            np.stack([s.target for s in samples]),
            tuple(s.clip_id for s in samples),
            np.array([s.frame_index for s in samples], dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise VoxblendError("no samples to concatenate")
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.targets for p in parts]),
            tuple(c for p in parts for c in p.clip_ids),
            np.concatenate([p.frame_indices for p in parts]),
        )

    def normalized(self, normalizer: Normalizer) -> "SampleSet":
        return replace(self, features=apply_normalizer(self.features, normalizer))

    def subset(self, indices: Sequence[int]) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.intp)
        return SampleSet(self.features[idx], self.targets[idx], tuple(self.clip_ids[i] for i in idx), self.frame_indices[idx])

    def runs(self) -> list[tuple[int, int]]:
        """``(start, length)`` of each maximal run of consecutive frames from one clip."""
        runs: list[tuple[int, int]] = []
        start = 0
        for i in range(1, len(self) + 1):
            if (
                i == len(self)
                or self.clip_ids[i] != self.clip_ids[i - 1]
                or self.frame_indices[i] != self.frame_indices[i - 1] + 1
            ):
                runs.append((start, i - start))
                start = i
        return runs

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], self.targets[i], self.clip_ids[i], int(self.frame_indices[i]))


def build_sample_set(
    clip: AudioClip,
    track: AnimTrack,
    cfg: FeatureConfig,
    clip_id: str = "",
    normalizer: Optional[Normalizer] = None,
    workers: Optional[int] = None,
) -> SampleSet:
    """One sample per track frame; features are raw unless ``normalizer`` is given."""
    available = video_frame_count(clip)
    if len(track) > available:
        raise VoxblendError(f"track {clip_id or '?'} has {len(track)} frames but audio covers only {available}")
    if len(track) == 0:
        return SampleSet.empty(cfg.n_columns)
    windows = feature_windows(clip, cfg, range(len(track)), workers=workers)
    if normalizer is not None:
        windows = apply_normalizer(windows, normalizer)
    return SampleSet(windows, np.array(track.frames), (clip_id,) * len(track), np.arange(len(track), dtype=np.int64))


def build_samples(
    clip: AudioClip,
    track: AnimTrack,
    cfg: FeatureConfig,
    clip_id: str = "",
    normalizer: Optional[Normalizer] = None,
    workers: Optional[int] = None,
) -> List[Sample]:
    sample_set = build_sample_set(clip, track, cfg, clip_id, normalizer, workers)
    return [sample_set[i] for i in range(len(sample_set))]


@dataclass(frozen=True)
class ManifestEntry:
    wav: Path
    track: Path
    split: SplitTag = "train"

    @property
    def clip_id(self) -> str:
        return self.wav.stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    normalizer: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def tagged(self, split: SplitTag) -> "DatasetManifest":
        return DatasetManifest(tuple(e for e in self.entries if e.split == split), self.normalizer)


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read ``<wav>,<csv>,<train|val>`` lines; relative paths resolve beside the manifest.

    ``#`` starts a comment; ``#normalizer=<path>`` names persisted normalizer stats.
    """
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    normalizer: Optional[Path] = None
    with open(path) as fp:
        for line_no, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#normalizer="):
                    normalizer = base / line.split("=", 1)[1].strip()
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 or parts[2] not in ("train", "val"):
                raise ManifestError(f"{path}:{line_no}: expected '<wav>,<csv>,<train|val>', got {line!r}")
            entries.append(ManifestEntry(base / parts[0], base / parts[1], parts[2]))  # type: ignore[arg-type]
    if not entries:
        raise ManifestError(f"{path}: no entries")
    return DatasetManifest(tuple(entries), normalizer)


def save_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w") as fp:
        if manifest.normalizer is not None:
            fp.write(f"#normalizer={rel(manifest.normalizer)}\n")
        for e in manifest.entries:
            fp.write(f"{rel(e.wav)},{rel(e.track)},{e.split}\n")


def split(manifest: DatasetManifest, ratio: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Clip-level seeded split; every clip lands in exactly one side."""
    if not 0.0 < ratio < 1.0:
        raise VoxblendError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(manifest.entries)
    if n < 2:
        raise VoxblendError(f"need at least 2 clips to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    train = tuple(replace(manifest.entries[i], split="train") for i in sorted(order[:n_train]))
    val = tuple(replace(manifest.entries[i], split="val") for i in sorted(order[n_train:]))
    _trace(f"split n={n} train={len(train)} val={len(val)} seed={seed}")
    return DatasetManifest(train, manifest.normalizer), DatasetManifest(val, manifest.normalizer)


def load_sample_set(
    entries: Iterable[ManifestEntry],
    cfg: FeatureConfig,
    normalizer: Optional[Normalizer] = None,
    workers: Optional[int] = None,
) -> SampleSet:
    parts = []
    for entry in entries:
        clip = load_wav(entry.wav)
        track = load_track(entry.track)
        parts.append(build_sample_set(clip, track, cfg, entry.clip_id, normalizer, workers))
    return SampleSet.concat(parts)


@dataclass
class PreparedData:
    train: SampleSet
    val: Optional[SampleSet]
    normalizer: Normalizer
    train_clips: list[str] = field(default_factory=list)
    val_clips: list[str] = field(default_factory=list)


def _stored_normalizer(path: Optional[Path], cfg: FeatureConfig) -> Optional[Normalizer]:
    if path is None or not path.exists():
        return None
    try:
        normalizer = load_normalizer(path, cfg)
    except NormalizerMismatch as exc:
        logger.warning(f"prepare_data: {exc}; refitting and overwriting")
        return None
    _trace(f"reusing normalizer {path}")
    return normalizer


def prepare_data(
    manifest: DatasetManifest,
    cfg: FeatureConfig,
    val_ratio: float = 0.2,
    seed: int = 0,
    workers: Optional[int] = None,
) -> PreparedData:
    """Resolve train/val entries, fit the normalizer on training windows, normalize both.

    A manifest naming a normalizer file reuses it when the file exists and was
    fitted under ``cfg``; otherwise the freshly fitted statistics are written
    there together with ``cfg``.
    """
    train_m, val_m = manifest.tagged("train"), manifest.tagged("val")
    if not len(val_m) and len(manifest) >= 2:
        train_m, val_m = split(manifest, 1.0 - val_ratio, seed)
    if not len(train_m):
        raise ManifestError("manifest has no training entries")
    raw_train = load_sample_set(train_m.entries, cfg, workers=workers)
    normalizer = _stored_normalizer(manifest.normalizer, cfg)
    if normalizer is None:
        normalizer = fit_normalizer(raw_train.features)
        if manifest.normalizer is not None:
            save_normalizer(manifest.normalizer, normalizer, cfg)
    train = raw_train.normalized(normalizer)
    val = load_sample_set(val_m.entries, cfg, normalizer, workers) if len(val_m) else None
    return PreparedData(
        train, val, normalizer, [e.clip_id for e in train_m.entries], [e.clip_id for e in val_m.entries]
    )
