"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Graph` records every operation whose inputs need gradients on a
tape in evaluation order. ``backward`` walks the tape in reverse and
accumulates gradients into per-node buffers, so the accumulation order is
fixed by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import ShapeError, VoxblendError
from .tracing import make_trace

_trace = make_trace("autograd")

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        name: Optional[str] = None,
        parents: Sequence["Tensor"] = (),
        backward: Optional[BackwardFn] = None,
    ) -> None:
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype} requires_grad={self.requires_grad}>"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


class Graph:
    """Owns a tape of operations and the trainable leaves they depend on.

    With ``record=False`` operations only compute values (inference mode).
    """

    def __init__(self, dtype: Union[str, np.dtype] = np.float32, record: bool = True) -> None:
        self.dtype = np.dtype(dtype)
        self.record = record
        self._tape: List[Tensor] = []
        self._leaves: Dict[str, Tensor] = {}

    # ── leaves ──

    def param(self, name: str, value: ArrayLike) -> Tensor:
        if name in self._leaves:
            raise VoxblendError(f"duplicate parameter name {name!r}")
        data = np.array(value, dtype=self.dtype)
        tensor = Tensor(data, requires_grad=self.record, name=name)
        self._leaves[name] = tensor
        return tensor

    def constant(self, value: ArrayLike) -> Tensor:
        return Tensor(np.asarray(value, dtype=self.dtype))

    @property
    def leaves(self) -> Dict[str, Tensor]:
        return dict(self._leaves)

    def __len__(self) -> int:
        return len(self._tape)

    # ── node construction ──

    def apply(self, data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        """Register a primitive. ``backward(grad_out)`` must call :meth:`accumulate` for each parent."""
        data = np.asarray(data, dtype=self.dtype)
        if not (self.record and any(p.requires_grad for p in parents)):
            return Tensor(data)
        node = Tensor(data, requires_grad=True, parents=parents, backward=backward)
        self._tape.append(node)
        return node

    @staticmethod
    def accumulate(tensor: Tensor, grad: np.ndarray) -> None:
        if not tensor.requires_grad:
            return
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        tensor.grad += grad

    @staticmethod
    def grad_buffer(tensor: Tensor) -> Optional[np.ndarray]:
        """Mutable gradient buffer for in-place scatter; ``None`` if no grad is needed."""
        if not tensor.requires_grad:
            return None
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        return tensor.grad

    # ── primitives ──

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g @ b.data.T)
            self.accumulate(b, a.data.T @ g)

        return self.apply(a.data @ b.data, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("add", a, b)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, _unbroadcast(g, a.shape))
            self.accumulate(b, _unbroadcast(g, b.shape))

        return self.apply(a.data + b.data, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("sub", a, b)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, _unbroadcast(g, a.shape))
            self.accumulate(b, -_unbroadcast(g, b.shape))

        return self.apply(a.data - b.data, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("mul", a, b)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, _unbroadcast(g * b.data, a.shape))
            self.accumulate(b, _unbroadcast(g * a.data, b.shape))

        return self.apply(a.data * b.data, (a, b), backward)

    def div(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("div", a, b)
        out = a.data / b.data

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, _unbroadcast(g / b.data, a.shape))
            self.accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

        return self.apply(out, (a, b), backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * factor)

        return self.apply(a.data * factor, (a,), backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        # split by sign so exp never overflows
        x = a.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * out * (1.0 - out))

        return self.apply(out, (a,), backward)

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * (1.0 - out * out))

        return self.apply(out, (a,), backward)

    def sqrt(self, a: Tensor) -> Tensor:
        out = np.sqrt(a.data)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * 0.5 / out)

        return self.apply(out, (a,), backward)

    def huber(self, a: Tensor, delta: float) -> Tensor:
        """Elementwise Huber value of ``a`` (quadratic inside ``delta``, linear outside)."""
        x = a.data
        ax = np.abs(x)
        out = np.where(ax <= delta, 0.5 * x * x, delta * ax - 0.5 * delta * delta)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * np.clip(x, -delta, delta))

        return self.apply(out, (a,), backward)

    def abs(self, a: Tensor) -> Tensor:
        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g * np.sign(a.data))

        return self.apply(np.abs(a.data), (a,), backward)

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        try:
            out = a.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g.reshape(a.shape))

        return self.apply(out, (a,), backward)

    def transpose(self, a: Tensor) -> Tensor:
        def backward(g: np.ndarray) -> None:
            self.accumulate(a, g.T)

        return self.apply(a.data.T, (a,), backward)

    def concat(self, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not parts:
            raise ShapeError("concat: no inputs")
        ref = parts[0].shape
        for p in parts[1:]:
            if p.data.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(p.shape, ref)) if i != axis % len(ref)):
                raise ShapeError(f"concat: incompatible shapes {ref} and {p.shape} along axis {axis}")
        bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

        def backward(g: np.ndarray) -> None:
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    self.accumulate(p, np.take(g, np.arange(lo, hi), axis=axis))

        return self.apply(np.concatenate([p.data for p in parts], axis=axis), parts, backward)

    def slice(self, a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
        """Rows (``axis=0``) or columns (``axis=1``) ``[start, stop)``."""
        if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[axis]:
            raise ShapeError(f"slice: [{start}, {stop}) along axis {axis} invalid for shape {a.shape}")
        index = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))

        def backward(g: np.ndarray) -> None:
            buf = self.grad_buffer(a)
            if buf is not None:
                buf[index] += g

        return self.apply(a.data[index], (a,), backward)

    def slice_row(self, a: Tensor, index: int) -> Tensor:
        return self.slice(a, index, index + 1, axis=0)

    def gather_rows(self, a: Tensor, indices: Sequence[int]) -> Tensor:
        idx = np.asarray(indices, dtype=np.intp)
        if a.data.ndim != 2 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
            raise ShapeError(f"gather_rows: indices out of range for shape {a.shape}")

        def backward(g: np.ndarray) -> None:
            buf = self.grad_buffer(a)
            if buf is not None:
                np.add.at(buf, idx, g)

        return self.apply(a.data[idx], (a,), backward)

    def softmax_rows(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError(f"softmax_rows: expected a matrix, got shape {a.shape}")
        shifted = a.data - a.data.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        out = ex / ex.sum(axis=1, keepdims=True)

        def backward(g: np.ndarray) -> None:
            dot = (g * out).sum(axis=1, keepdims=True)
            self.accumulate(a, out * (g - dot))

        return self.apply(out, (a,), backward)

    def reduce_sum(self, a: Tensor, axis: Optional[int] = None) -> Tensor:
        out = a.data.sum(axis=axis, keepdims=axis is not None)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, np.broadcast_to(g, a.shape))

        return self.apply(out, (a,), backward)

    def reduce_mean(self, a: Tensor, axis: Optional[int] = None) -> Tensor:
        count = a.data.size if axis is None else a.shape[axis]
        out = a.data.mean(axis=axis, keepdims=axis is not None)

        def backward(g: np.ndarray) -> None:
            self.accumulate(a, np.broadcast_to(g / count, a.shape))

        return self.apply(out, (a,), backward)

    # ── reverse pass ──

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every registered parameter.

        Parameters that ``loss`` does not depend on receive zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        for tensor in self._tape:
            tensor.grad = None
        for leaf in self._leaves.values():
            leaf.grad = None
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            for node in reversed(self._tape):
                if node.grad is not None and node._backward is not None:
                    node._backward(node.grad)
        _trace(f"backward over {len(self._tape)} nodes, {len(self._leaves)} leaves")
        return {
            name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            for name, leaf in self._leaves.items()
        }


@dataclass
class GradientCheckReport:
    passed: bool
    tolerance: float
    worst_relative_error: float
    worst_parameter: Optional[str]
    per_parameter: Dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return f"gradient check {verdict}: worst rel err {self.worst_relative_error:.3e} ({self.worst_parameter})"


GraphBuilder = Callable[[Graph, Dict[str, np.ndarray]], Tensor]


def gradient_check(
    builder: GraphBuilder,
    params: Dict[str, np.ndarray],
    tolerance: float = 1e-3,
    step: float = 1e-4,
    abs_floor: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradientCheckReport:
    """Compare ``Graph.backward`` against central finite differences in float64.

    ``builder(graph, params)`` must register each entry of ``params`` with
    ``graph.param`` and return the scalar loss. Failures are reported, never
    raised.
    """
    values = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    graph = Graph(np.float64)
    analytic = graph.backward(builder(graph, values))

    def evaluate() -> float:
        return float(builder(Graph(np.float64, record=False), values).data.reshape(-1)[0])

    rng = np.random.default_rng(seed)
    per_parameter: Dict[str, float] = {}
    for name, value in values.items():
        flat = value.reshape(-1)
        entries: Iterable[int] = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        grad = analytic[name].reshape(-1)
        worst = 0.0
        for i in entries:
            original = flat[i]
            flat[i] = original + step
            plus = evaluate()
            flat[i] = original - step
            minus = evaluate()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(grad[i]), abs(numeric), abs_floor)
            worst = max(worst, abs(grad[i] - numeric) / denom)
        per_parameter[name] = worst

    worst_name = max(per_parameter, key=per_parameter.get) if per_parameter else None
    worst_err = per_parameter[worst_name] if worst_name else 0.0
    report = GradientCheckReport(worst_err < tolerance, tolerance, worst_err, worst_name, per_parameter)
    _trace(str(report))
    return report
