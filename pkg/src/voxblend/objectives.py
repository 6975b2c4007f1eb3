"""Training losses and evaluation metrics.

The target term is a per-component Huber (or MSE/MAE) averaged over the 51
parameters; the smooth term is the cosine distance ``1 - cos`` between
adjacent predicted frames. Metrics operate on the normalized [0, 1] scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import Graph, Tensor
from .config import LossConfig
from .errors import ShapeError, VoxblendError
from .tracing import logger, make_trace

_trace = make_trace("objectives")


def _vec(frame) -> np.ndarray:
    return np.asarray(getattr(frame, "params", frame), dtype=np.float64)


def _frames(track) -> np.ndarray:
    frames = np.asarray(getattr(track, "frames", track), dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"expected (n_frames, n_params), got shape {frames.shape}")
    return frames


def _pair(y, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a, b = _vec(y), _vec(y_pred)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def huber_values(e: np.ndarray, delta: float) -> np.ndarray:
    ae = np.abs(e)
    return np.where(ae <= delta, 0.5 * e * e, delta * ae - 0.5 * delta * delta)


def huber(y, y_pred, delta: float = 1.0) -> float:
    a, b = _pair(y, y_pred)
    return float(np.mean(huber_values(a - b, delta)))


def target_loss(y, y_pred, cfg: LossConfig) -> float:
    a, b = _pair(y, y_pred)
    e = a - b
    if cfg.target_kind == "huber":
        return float(np.mean(huber_values(e, cfg.delta)))
    if cfg.target_kind == "mse":
        return float(np.mean(0.5 * e * e))
    return float(np.mean(np.abs(e)))


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    return float(1.0 - np.dot(a, b) / (na * nb))


def smooth_loss(y_prev, y_curr) -> float:
    """``1 - cos(y_prev, y_curr)``; a zero-norm frame yields 0 and a warning."""
    a, b = _pair(y_prev, y_curr)
    value = _cosine_distance(a, b)
    if value is None:
        logger.warning("smooth_loss: zero-norm frame in pair; contributing 0")
        return 0.0
    return value


@dataclass(frozen=True)
class LossReport:
    total: float
    target_term: float
    smooth_term: float
    degenerate_pairs: int = 0


def total_loss(pred_seq, target_seq, cfg: LossConfig = LossConfig()) -> LossReport:
    pred = _frames(pred_seq)
    return segmented_loss(pred, target_seq, [pred.shape[0]], cfg)


def segmented_loss(pred_seq, target_seq, segment_lengths: Sequence[int], cfg: LossConfig = LossConfig()) -> LossReport:
    """Like :func:`total_loss`, but smooth pairs never cross a segment boundary.

    The smooth term is the mean over all within-segment pairs.
    """
    pred, target = _frames(pred_seq), _frames(target_seq)
    n = pred.shape[0]
    if n == 0:
        raise VoxblendError("total_loss needs at least one frame")
    if pred.shape != target.shape:
        raise ShapeError(f"sequence mismatch: {pred.shape} vs {target.shape}")
    if sum(segment_lengths) != n:
        raise ShapeError(f"segments cover {sum(segment_lengths)} frames, sequence has {n}")
    target_term = sum(target_loss(target[i], pred[i], cfg) for i in range(n)) / n
    prev_rows, next_rows = adjacent_pairs(segment_lengths)
    smooth_sum, degenerate = 0.0, 0
    for i, j in zip(prev_rows, next_rows):
        value = _cosine_distance(pred[i], pred[j])
        if value is None:
            degenerate += 1
        else:
            smooth_sum += value
    if degenerate:
        logger.warning(f"total_loss: {degenerate} zero-norm frame pair(s) contributed 0")
    smooth_term = smooth_sum / max(len(prev_rows), 1)
    _trace(f"total_loss n={n} segments={len(segment_lengths)} target={target_term:.6f} smooth={smooth_term:.6f}")
    return LossReport(cfg.w1 * target_term + cfg.w2 * smooth_term, target_term, smooth_term, degenerate)


def rmse(pred_track, ref_track) -> float:
    pred, ref = _frames(pred_track), _frames(ref_track)
    if pred.shape != ref.shape:
        raise ShapeError(f"track mismatch: {pred.shape[0]} vs {ref.shape[0]} frames")
    if pred.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def jitter(track) -> float:
    frames = _frames(track)
    if frames.shape[0] < 2:
        raise VoxblendError(f"jitter needs at least 2 frames, got {frames.shape[0]}")
    return float(np.mean(np.abs(np.diff(frames, axis=0)).sum(axis=1)) / frames.shape[1])


# ── differentiable versions used by the trainer ──


def target_loss_graph(g: Graph, pred: Tensor, target: Tensor, cfg: LossConfig) -> Tensor:
    """Mean over frames of the per-frame component-mean target loss (scalar)."""
    e = g.sub(pred, target)
    if cfg.target_kind == "huber":
        per = g.huber(e, cfg.delta)
    elif cfg.target_kind == "mse":
        per = g.scale(g.mul(e, e), 0.5)
    else:
        per = g.abs(e)
    return g.reduce_mean(per)


def smooth_loss_graph(g: Graph, pred: Tensor, prev_rows: Sequence[int], next_rows: Sequence[int]) -> Optional[Tensor]:
    """Mean cosine distance over the given adjacent row pairs; ``None`` without pairs."""
    if len(prev_rows) == 0:
        return None
    a = g.gather_rows(pred, prev_rows)
    b = g.gather_rows(pred, next_rows)
    dot = g.reduce_sum(g.mul(a, b), axis=1)
    norms = g.mul(g.sqrt(g.reduce_sum(g.mul(a, a), axis=1)), g.sqrt(g.reduce_sum(g.mul(b, b), axis=1)))
    cos = g.div(dot, norms)
    return g.sub(g.constant(1.0), g.reduce_mean(cos))


@dataclass
class GraphLoss:
    total: Tensor
    target_term: Tensor
    smooth_term: Optional[Tensor]

    def report(self) -> LossReport:
        smooth = 0.0 if self.smooth_term is None else self.smooth_term.item()
        return LossReport(self.total.item(), self.target_term.item(), smooth)


def total_loss_graph(
    g: Graph,
    pred: Tensor,
    target: np.ndarray,
    cfg: LossConfig,
    prev_rows: Sequence[int] = (),
    next_rows: Sequence[int] = (),
) -> GraphLoss:
    target_term = target_loss_graph(g, pred, g.constant(target), cfg)
    total = g.scale(target_term, cfg.w1)
    smooth_term = smooth_loss_graph(g, pred, prev_rows, next_rows)
    if smooth_term is not None and cfg.w2 > 0.0:
        total = g.add(total, g.scale(smooth_term, cfg.w2))
    return GraphLoss(total, target_term, smooth_term)


def adjacent_pairs(segment_lengths: Sequence[int]) -> tuple[list[int], list[int]]:
    """Row index pairs (i-1, i) inside each contiguous segment of a stacked batch."""
    prev_rows: list[int] = []
    next_rows: list[int] = []
    offset = 0
    for length in segment_lengths:
        prev_rows.extend(range(offset, offset + length - 1))
        next_rows.extend(range(offset + 1, offset + length))
        offset += length
    return prev_rows, next_rows


@dataclass
class ComparisonTable:
    """RMSE per model (rows) and evaluation clip (columns), with a leading mean."""

    columns: list[str]
    rows: dict[str, list[float]] = field(default_factory=dict)

    def add(self, model: str, values: Sequence[float]) -> None:
        if len(values) != len(self.columns):
            raise ShapeError(f"{model}: {len(values)} values for {len(self.columns)} columns")
        self.rows[model] = [float(v) for v in values]

    def mean(self, model: str) -> float:
        values = self.rows[model]
        return float(np.mean(values)) if values else 0.0

    def format(self) -> str:
        names = ["Model"] + list(self.rows)
        width = max(len(n) for n in names)
        header = f"{'Model':<{width}}  {'Mean':>8}" + "".join(f"  {c:>8}" for c in self.columns)
        lines = [header]
        for model, values in self.rows.items():
            cells = "".join(f"  {v:>8.4f}" for v in values)
            lines.append(f"{model:<{width}}  {self.mean(model):>8.4f}{cells}")
        return "\n".join(lines)
