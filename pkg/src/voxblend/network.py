"""Stacked bidirectional LSTM with attention pooling and a dense output head.

Sequences are kept *stacked*: a batch of B windows with T time steps is a
``(T * B, d)`` matrix whose row ``t * B + b`` is step t of window b. With
B = 1 the stacked matrix is simply the ``(T, d)`` sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Union

import numpy as np

from .autograd import Graph, Tensor
from .config import N_BLENDSHAPES, NATIVE_SCALE, ModelConfig
from .errors import ShapeError, VoxblendError
from .tracing import make_trace

_trace = make_trace("network")

ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class BlendshapeFrame:
    """51 parameters on the internal [0, 1] scale."""

    params: np.ndarray

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (N_BLENDSHAPES,):
            raise ShapeError(f"blendshape frame needs {N_BLENDSHAPES} values, got shape {params.shape}")
        object.__setattr__(self, "params", params)

    @property
    def native(self) -> np.ndarray:
        return self.params * NATIVE_SCALE


@dataclass(frozen=True)
class LstmCellParams:
    w_x: Tensor  # (d, 4H), gate order i, f, g, o
    w_h: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]


@dataclass(frozen=True)
class BiLstmLayerParams:
    forward_cell: LstmCellParams
    backward_cell: Optional[LstmCellParams]
    combine_fwd: Tensor  # (H, H)
    combine_bwd: Optional[Tensor]
    combine_bias: Tensor  # (H,)

    def swapped(self) -> "BiLstmLayerParams":
        """Exchange the two directions (cells and combine matrices)."""
        if self.backward_cell is None or self.combine_bwd is None:
            raise VoxblendError("cannot swap directions of a unidirectional layer")
        return BiLstmLayerParams(self.backward_cell, self.forward_cell, self.combine_bwd, self.combine_fwd, self.combine_bias)


@dataclass(frozen=True)
class AttentionParams:
    w: Tensor  # (H, 1)


@dataclass(frozen=True)
class DenseParams:
    w: Tensor
    b: Tensor


@dataclass(frozen=True)
class BoundModel:
    """Model tensors registered on one graph."""

    config: ModelConfig
    layer1: BiLstmLayerParams
    layer2: BiLstmLayerParams
    attention: Optional[AttentionParams]
    dense1: DenseParams
    dense2: DenseParams


def param_shapes(config: ModelConfig) -> Dict[str, tuple[int, ...]]:
    h = config.hidden_size
    shapes: Dict[str, tuple[int, ...]] = {}
    for layer, d in (("layer1", config.input_cols), ("layer2", h)):
        directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
        for direction in directions:
            shapes[f"{layer}.{direction}.w_x"] = (d, 4 * h)
            shapes[f"{layer}.{direction}.w_h"] = (h, 4 * h)
            shapes[f"{layer}.{direction}.b"] = (4 * h,)
        shapes[f"{layer}.combine_fwd"] = (h, h)
        if config.bidirectional:
            shapes[f"{layer}.combine_bwd"] = (h, h)
        shapes[f"{layer}.combine_b"] = (h,)
    if config.use_attention:
        shapes["attention.w"] = (h, 1)
    shapes["dense1.w"] = (h, config.basis_size)
    shapes["dense1.b"] = (config.basis_size,)
    shapes["dense2.w"] = (config.basis_size, config.output_size)
    shapes["dense2.b"] = (config.output_size,)
    return shapes


@dataclass(frozen=True)
class ModelParams:
    """Immutable named tensors plus the config that shapes them."""

    config: ModelConfig
    tensors: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = param_shapes(self.config)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"model tensors mismatch config: missing={missing} extra={extra}")
        frozen: Dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            array = np.array(self.tensors[name])
            if array.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {array.shape}")
            if not np.all(np.isfinite(array)):
                raise VoxblendError(f"{name}: non-finite values")
            array.setflags(write=False)
            frozen[name] = array
        object.__setattr__(self, "tensors", frozen)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def replace(self, tensors: Mapping[str, np.ndarray]) -> "ModelParams":
        merged = dict(self.tensors)
        merged.update(tensors)
        return ModelParams(self.config, merged)

    def astype(self, dtype: Union[str, np.dtype]) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def bind(self, graph: Graph, trainable: bool = True) -> BoundModel:
        if trainable:
            t = {name: graph.param(name, value) for name, value in self.tensors.items()}
        else:
            t = {name: graph.constant(value) for name, value in self.tensors.items()}
        return bind_tensors(self.config, t)


def bind_tensors(config: ModelConfig, t: Mapping[str, Tensor]) -> BoundModel:
    def cell(prefix: str) -> LstmCellParams:
        return LstmCellParams(t[f"{prefix}.w_x"], t[f"{prefix}.w_h"], t[f"{prefix}.b"])

    def layer(name: str) -> BiLstmLayerParams:
        if config.bidirectional:
            return BiLstmLayerParams(
                cell(f"{name}.fwd"), cell(f"{name}.bwd"), t[f"{name}.combine_fwd"], t[f"{name}.combine_bwd"], t[f"{name}.combine_b"]
            )
        return BiLstmLayerParams(cell(f"{name}.fwd"), None, t[f"{name}.combine_fwd"], None, t[f"{name}.combine_b"])

    return BoundModel(
        config=config,
        layer1=layer("layer1"),
        layer2=layer("layer2"),
        attention=AttentionParams(t["attention.w"]) if config.use_attention else None,
        dense1=DenseParams(t["dense1.w"], t["dense1.b"]),
        dense2=DenseParams(t["dense2.w"], t["dense2.b"]),
    )


def init_params(config: ModelConfig, seed: int, dtype: Union[str, np.dtype] = np.float32) -> ModelParams:
    """Gaussian init with std 1/sqrt(fan_in); biases zero except forget gates at 1.0."""
    rng = np.random.default_rng(seed)
    h = config.hidden_size
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            bias = np.zeros(shape)
            if name.endswith(("fwd.b", "bwd.b")):
                bias[h : 2 * h] = 1.0
            tensors[name] = bias
    _trace(f"init_params seed={seed} hidden={h} tensors={len(tensors)}")
    return ModelParams(config, {k: v.astype(dtype) for k, v in tensors.items()})


def lstm_cell_step(
    g: Graph,
    x: Optional[Tensor],
    h_prev: Optional[Tensor],
    c_prev: Optional[Tensor],
    p: LstmCellParams,
    x_proj: Optional[Tensor] = None,
) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``None`` for ``h_prev``/``c_prev`` means the zero state.

    ``x_proj`` may carry a precomputed ``x @ w_x``.
    """
    hs = p.hidden_size
    if x_proj is None:
        if x is None or x.data.ndim != 2 or x.shape[1] != p.w_x.shape[0]:
            raise ShapeError(f"lstm_cell_step: input shape {None if x is None else x.shape} vs w_x {p.w_x.shape}")
        x_proj = g.matmul(x, p.w_x)
    z = x_proj
    if h_prev is not None:
        if h_prev.data.ndim != 2 or h_prev.shape[1] != hs:
            raise ShapeError(f"lstm_cell_step: hidden shape {h_prev.shape} vs hidden size {hs}")
        z = g.add(z, g.matmul(h_prev, p.w_h))
    z = g.add(z, p.b)
    i = g.sigmoid(g.slice(z, 0, hs, axis=1))
    f = g.sigmoid(g.slice(z, hs, 2 * hs, axis=1))
    cand = g.tanh(g.slice(z, 2 * hs, 3 * hs, axis=1))
    o = g.sigmoid(g.slice(z, 3 * hs, 4 * hs, axis=1))
    c = g.mul(i, cand)
    if c_prev is not None:
        c = g.add(g.mul(f, c_prev), c)
    h = g.mul(o, g.tanh(c))
    return h, c


def _run_direction(g: Graph, x_proj: Tensor, steps: int, batch: int, cell: LstmCellParams, reverse: bool) -> list[Tensor]:
    outputs: list[Optional[Tensor]] = [None] * steps
    h: Optional[Tensor] = None
    c: Optional[Tensor] = None
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        proj_t = g.slice(x_proj, t * batch, (t + 1) * batch, axis=0)
        h, c = lstm_cell_step(g, None, h, c, cell, x_proj=proj_t)
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm_forward(g: Graph, seq: Tensor, p: BiLstmLayerParams, batch: int = 1) -> Tensor:
    """Stacked ``(T * batch, d)`` input to stacked ``(T * batch, H)`` combined states."""
    if seq.data.ndim != 2 or seq.shape[0] == 0:
        raise ShapeError(f"bilstm_forward: need a non-empty (T*B, d) sequence, got shape {seq.shape}")
    if seq.shape[0] % batch:
        raise ShapeError(f"bilstm_forward: {seq.shape[0]} rows is not a multiple of batch {batch}")
    if seq.shape[1] != p.forward_cell.w_x.shape[0]:
        raise ShapeError(f"bilstm_forward: input width {seq.shape[1]} vs w_x {p.forward_cell.w_x.shape}")
    steps = seq.shape[0] // batch
    fwd = _run_direction(g, g.matmul(seq, p.forward_cell.w_x), steps, batch, p.forward_cell, reverse=False)
    out = g.matmul(g.concat(fwd, axis=0), p.combine_fwd)
    if p.backward_cell is not None and p.combine_bwd is not None:
        bwd = _run_direction(g, g.matmul(seq, p.backward_cell.w_x), steps, batch, p.backward_cell, reverse=True)
        out = g.add(out, g.matmul(g.concat(bwd, axis=0), p.combine_bwd))
    return g.add(out, p.combine_bias)


def attention_pool(g: Graph, states: Tensor, p: AttentionParams, batch: int = 1) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum over time; returns pooled ``(B, H)`` and weights ``(B, T)``."""
    if states.data.ndim != 2 or states.shape[0] == 0 or states.shape[0] % batch:
        raise ShapeError(f"attention_pool: bad stacked states shape {states.shape} for batch {batch}")
    if p.w.shape != (states.shape[1], 1):
        raise ShapeError(f"attention_pool: score vector {p.w.shape} vs hidden {states.shape[1]}")
    steps, hidden = states.shape[0] // batch, states.shape[1]
    scores = g.matmul(g.tanh(states), p.w)  # (T*B, 1)
    alpha = g.softmax_rows(g.transpose(g.reshape(scores, (steps, batch))))  # (B, T)
    weights = g.reshape(g.transpose(alpha), (steps * batch, 1))
    weighted = g.reshape(g.mul(states, weights), (steps, batch * hidden))
    pooled = g.reshape(g.reduce_sum(weighted, axis=0), (batch, hidden))
    return pooled, alpha


def output_head(g: Graph, y: Tensor, dense1: DenseParams, dense2: DenseParams) -> Tensor:
    basis = g.tanh(g.add(g.matmul(y, dense1.w), dense1.b))
    return g.sigmoid(g.add(g.matmul(basis, dense2.w), dense2.b))


@dataclass(frozen=True)
class ForwardResult:
    output: Tensor  # (B, 51)
    alpha: Optional[Tensor]  # (B, T)


def stack_windows(g: Graph, windows: np.ndarray) -> Tensor:
    """``(B, T, d)`` windows to a stacked ``(T * B, d)`` constant."""
    b, t, d = windows.shape
    return g.constant(np.ascontiguousarray(np.transpose(windows, (1, 0, 2))).reshape(t * b, d))


def forward_graph(g: Graph, model: BoundModel, windows: np.ndarray) -> ForwardResult:
    windows = np.asarray(windows)
    cfg = model.config
    if windows.ndim != 3 or windows.shape[1:] != (cfg.input_rows, cfg.input_cols):
        raise ShapeError(f"model input must be (B, {cfg.input_rows}, {cfg.input_cols}), got shape {windows.shape}")
    batch, steps = windows.shape[0], windows.shape[1]
    seq = stack_windows(g, windows)
    h1 = bilstm_forward(g, seq, model.layer1, batch)
    h2 = bilstm_forward(g, h1, model.layer2, batch)
    alpha: Optional[Tensor] = None
    if model.attention is not None:
        pooled, alpha = attention_pool(g, h2, model.attention, batch)
    else:
        pooled = g.slice(h2, (steps - 1) * batch, steps * batch, axis=0)
    return ForwardResult(output_head(g, pooled, model.dense1, model.dense2), alpha)


@dataclass(frozen=True)
class ModelOutput:
    frames: np.ndarray  # (B, 51)
    alpha: Optional[np.ndarray]  # (B, T)

    @property
    def frame(self) -> BlendshapeFrame:
        return BlendshapeFrame(self.frames[0])


def model_forward(window, params: ModelParams) -> ModelOutput:
    """Inference on one window (``(64, cols)``, a FeatureWindow) or a batch ``(B, 64, cols)``."""
    coeffs = getattr(window, "coeffs", window)
    coeffs = np.asarray(coeffs)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    g = Graph(params.dtype, record=False)
    result = forward_graph(g, params.bind(g, trainable=False), coeffs.astype(params.dtype))
    alpha = None if result.alpha is None else result.alpha.data.astype(np.float64)
    return ModelOutput(result.output.data.astype(np.float64), alpha)
