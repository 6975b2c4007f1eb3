"""Minibatch training with Adam, chunked sequences and A2FM checkpoints."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .autograd import Graph
from .codec import iter_table, read_header, tensor_text, text_tensor, write_header, write_table
from .config import FeatureConfig, LossConfig, ModelConfig, TrainConfig
from .dataset import SampleSet
from .errors import CheckpointError, ShapeError, TrainingDivergedError, VoxblendError
from .frontend import Normalizer
from .network import ModelParams, forward_graph, init_params, model_forward
from .objectives import LossReport, adjacent_pairs, rmse, segmented_loss, total_loss_graph
from .tracing import make_trace

_trace = make_trace("trainer")

PathLike = Union[str, Path]

# "A2FM" | u32 version | tensor table (u32 count, then records; see codec)
CHECKPOINT_MAGIC = b"A2FM"
CHECKPOINT_VERSION = 1
LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_rmse")


# ── optimizer ──


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        names = list(params)
        return cls(
            {n: np.zeros(np.shape(params[n])) for n in names},
            {n: np.zeros(np.shape(params[n])) for n in names},
        )


ParamsLike = Union[ModelParams, Mapping[str, np.ndarray]]


def adam_step(
    params: ParamsLike,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[ParamsLike, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched.

    Moments are kept in float64 and updated parameters are cast back to each
    parameter's dtype. A :class:`ModelParams` in gives a :class:`ModelParams` out.
    """
    beta1, beta2 = betas
    names = list(params)
    if set(grads) != set(names):
        raise ShapeError(f"gradient names do not match parameters: {sorted(set(grads) ^ set(names))}")
    step = state.step + 1
    m_new: Dict[str, np.ndarray] = {}
    v_new: Dict[str, np.ndarray] = {}
    updated: Dict[str, np.ndarray] = {}
    for name in names:
        p = np.asarray(params[name])
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} does not match parameter {p.shape}")
        m_prev = state.m.get(name, np.zeros(p.shape))
        v_prev = state.v.get(name, np.zeros(p.shape))
        if m_prev.shape != p.shape or v_prev.shape != p.shape:
            raise ShapeError(f"{name}: optimizer moments shaped {m_prev.shape}, parameter {p.shape}")
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        updated[name] = (p.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_new[name], v_new[name] = m, v
    new_state = AdamState(m_new, v_new, step)
    if isinstance(params, ModelParams):
        return params.replace(updated), new_state
    return updated, new_state


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: (g * factor).astype(g.dtype) for name, g in grads.items()}, norm


# ── epoch schedule ──


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray  # sample indices, segment after segment
    segments: Tuple[int, ...]  # lengths of contiguous runs inside ``indices``

    def __len__(self) -> int:
        return int(self.indices.size)


def make_chunks(samples: SampleSet, sequence_chunk: int) -> List[np.ndarray]:
    """Cut every clip run into consecutive chunks of ``sequence_chunk`` frames (the last may be shorter)."""
    chunks = []
    for start, length in samples.runs():
        for offset in range(0, length, sequence_chunk):
            stop = min(offset + sequence_chunk, length)
            chunks.append(np.arange(start + offset, start + stop))
    return chunks


def make_batches(
    samples: SampleSet,
    batch_size: int,
    sequence_chunk: int,
    seed: int,
    epoch: int = 0,
) -> List[Batch]:
    """Shuffle chunks with ``(seed, epoch)`` and pack them into batches of ``batch_size`` frames.

    A chunk straddling a batch boundary is split; each piece becomes its own
    segment so smooth pairs stay within one batch.
    """
    if len(samples) == 0:
        raise VoxblendError("cannot schedule an empty sample set")
    if batch_size < 1 or sequence_chunk < 1:
        raise VoxblendError(f"batch_size and sequence_chunk must be positive, got {batch_size}, {sequence_chunk}")
    chunks = make_chunks(samples, sequence_chunk)
    order = np.random.default_rng([seed, epoch]).permutation(len(chunks))
    batches: List[Batch] = []
    pieces: List[np.ndarray] = []
    room = batch_size
    for c in order:
        chunk = chunks[c]
        while chunk.size:
            piece, chunk = chunk[:room], chunk[room:]
            pieces.append(piece)
            room -= piece.size
            if room == 0:
                batches.append(Batch(np.concatenate(pieces), tuple(p.size for p in pieces)))
                pieces, room = [], batch_size
    if pieces:
        batches.append(Batch(np.concatenate(pieces), tuple(p.size for p in pieces)))
    _trace(f"make_batches seed={seed} epoch={epoch} chunks={len(chunks)} batches={len(batches)}")
    return batches


# ── checkpoints ──


@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    feature_config: FeatureConfig
    normalizer: Normalizer
    epoch: int = 0
    loss_history: Tuple[float, ...] = ()

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config


def checkpoint_tensors(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {name: ckpt.params[name] for name in ckpt.params}
    tensors["config.model"] = text_tensor(ckpt.model_config.model_dump_json())
    tensors["config.feature"] = text_tensor(ckpt.feature_config.model_dump_json())
    tensors.update(ckpt.normalizer.tensors())
    tensors["meta.epoch"] = np.array(ckpt.epoch, dtype=np.float32)
    tensors["meta.loss_history"] = np.array(ckpt.loss_history, dtype=np.float32)
    return tensors


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    with open(path, "wb") as fp:
        write_header(fp, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        write_table(fp, checkpoint_tensors(ckpt))
    _trace(f"saved checkpoint {path} epoch={ckpt.epoch}")


def load_checkpoint(path: PathLike) -> Checkpoint:
    with open(path, "rb") as fp:
        read_header(fp, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
        tensors = dict(iter_table(fp))
    try:
        model_cfg = ModelConfig.model_validate_json(tensor_text(tensors.pop("config.model")))
        feature_cfg = FeatureConfig.model_validate_json(tensor_text(tensors.pop("config.feature")))
        normalizer = Normalizer.from_tensors({k: tensors.pop(k) for k in list(tensors) if k.startswith("normalizer.")})
        epoch = int(tensors.pop("meta.epoch"))
        history = tuple(float(x) for x in tensors.pop("meta.loss_history"))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing checkpoint block {exc}") from exc
    _trace(f"loaded checkpoint {path} epoch={epoch} tensors={len(tensors)}")
    return Checkpoint(ModelParams(model_cfg, tensors), feature_cfg, normalizer, epoch, history)


# ── evaluation ──


def predict(params: ModelParams, features: np.ndarray, batch_size: int = 100) -> np.ndarray:
    """Model outputs ``(n, 51)`` for stacked windows, evaluated in batches."""
    outputs = [
        model_forward(features[i : i + batch_size], params).frames for i in range(0, features.shape[0], batch_size)
    ]
    return np.concatenate(outputs) if outputs else np.zeros((0, params.config.output_size))


@dataclass(frozen=True)
class EvalReport:
    loss: LossReport
    rmse: float


def evaluate_params(params: ModelParams, samples: SampleSet, loss_cfg: LossConfig = LossConfig()) -> EvalReport:
    pred = predict(params, samples.features)
    report = segmented_loss(pred, samples.targets, [length for _, length in samples.runs()], loss_cfg)
    return EvalReport(report, rmse(pred, samples.targets))


def evaluate(ckpt: Checkpoint, samples: SampleSet, loss_cfg: LossConfig = LossConfig()) -> EvalReport:
    """Loss and normalized RMSE of ``ckpt`` on an already-normalized sample set."""
    return evaluate_params(ckpt.params, samples, loss_cfg)


# ── training loop ──


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    val_rmse: Optional[float] = None

    def row(self) -> list[str]:
        def fmt(x: Optional[float]) -> str:
            return "" if x is None else f"{x:.8f}"

        return [str(self.epoch), fmt(self.train_loss), fmt(self.val_loss), fmt(self.val_rmse)]


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    history: List[EpochRecord]


def train_batch(
    params: ModelParams,
    samples: SampleSet,
    batch: Batch,
    state: AdamState,
    cfg: TrainConfig,
    epoch: int = 0,
    index: int = 0,
) -> Tuple[ModelParams, AdamState, LossReport]:
    """Forward, loss, backward, clip and Adam update for one batch."""
    g = Graph(params.dtype)
    model = params.bind(g)
    result = forward_graph(g, model, samples.features[batch.indices])
    prev_rows, next_rows = adjacent_pairs(batch.segments)
    loss = total_loss_graph(g, result.output, samples.targets[batch.indices], cfg.loss, prev_rows, next_rows)
    value = loss.total.item()
    if not math.isfinite(value):
        raise TrainingDivergedError(epoch, index, value)
    grads = g.backward(loss.total)
    grads, norm = clip_gradients(grads, cfg.clip_norm)
    params, state = adam_step(params, grads, state, cfg.learning_rate, cfg.betas, cfg.epsilon)
    _trace(f"batch frames={len(batch)} loss={value:.6f} grad_norm={norm:.4f}")
    return params, state, loss.report()


def _history(records: Sequence[EpochRecord]) -> Tuple[float, ...]:
    # stored as float32 in checkpoints
    return tuple(float(np.float32(r.train_loss)) for r in records)


class _LogWriter:
    def __init__(self, path: Optional[Path]) -> None:
        self.path = path
        if path is not None:
            with open(path, "w", newline="") as fp:
                csv.writer(fp).writerow(LOG_FIELDS)

    def append(self, record: EpochRecord) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fp:
            csv.writer(fp).writerow(record.row())


def train(
    train_set: SampleSet,
    val_set: Optional[SampleSet],
    cfg: TrainConfig,
    out_dir: Optional[PathLike],
    feature_cfg: FeatureConfig = FeatureConfig(),
    normalizer: Optional[Normalizer] = None,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train from ``params`` (or a seeded init) for ``cfg.epochs`` epochs.

    With ``out_dir`` set, writes ``train_log.csv``, ``best.a2fm`` (lowest
    validation loss, or training loss without a validation set) and
    ``final.a2fm``.
    """
    if len(train_set) == 0:
        raise VoxblendError("training set is empty")
    if cfg.model.input_cols != feature_cfg.n_columns:
        raise ShapeError(f"model expects {cfg.model.input_cols} feature columns, features have {feature_cfg.n_columns}")
    if train_set.features.shape[1:] != (cfg.model.input_rows, cfg.model.input_cols):
        expected = (cfg.model.input_rows, cfg.model.input_cols)
        raise ShapeError(f"training windows shaped {train_set.features.shape[1:]}, model expects {expected}")
    normalizer = normalizer or Normalizer.identity(feature_cfg.n_columns)
    params = params or init_params(cfg.model, cfg.seed)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = _LogWriter(None if out is None else out / "train_log.csv")

    state = AdamState.zeros_like(params)
    history: List[EpochRecord] = []
    best: Optional[Checkpoint] = None
    best_score = math.inf
    for epoch in range(1, cfg.epochs + 1):
        total, frames = 0.0, 0
        for b, batch in enumerate(make_batches(train_set, cfg.batch_size, cfg.sequence_chunk, cfg.seed, epoch)):
            params, state, report = train_batch(params, train_set, batch, state, cfg, epoch, b)
            total += report.total * len(batch)
            frames += len(batch)
        record = EpochRecord(epoch, total / frames)
        if val_set is not None and len(val_set):
            ev = evaluate_params(params, val_set, cfg.loss)
            record = EpochRecord(epoch, record.train_loss, ev.loss.total, ev.rmse)
        history.append(record)
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)
        _trace(f"epoch={epoch} train={record.train_loss:.6f} val={record.val_loss} rmse={record.val_rmse}")

        ckpt = Checkpoint(params, feature_cfg, normalizer, epoch, _history(history))
        score = record.val_loss if record.val_loss is not None else record.train_loss
        if score < best_score:
            best_score, best = score, ckpt
            if out is not None:
                save_checkpoint(ckpt, out / "best.a2fm")

    final = Checkpoint(params, feature_cfg, normalizer, cfg.epochs, _history(history))
    if out is not None:
        save_checkpoint(final, out / "final.a2fm")
    return TrainResult(final, best or final, history)


def training_rmse(ckpt: Checkpoint, samples: SampleSet) -> float:
    return rmse(predict(ckpt.params, samples.features), samples.targets)


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Moving average over non-overlapping ``window``-epoch blocks."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size // window
    if n == 0:
        return values.copy()
    return values[: n * window].reshape(n, window).mean(axis=1)
