"""
Dense float64 tensors with a reverse-mode gradient tape

Only the operations the DCM block and the contrastive losses need are
provided. Tensors are immutable values; an operation whose inputs are
tracked on a GradTape appends one node to that tape. Every operation
checks its result for NaN/Inf and raises NumericError instead of letting
non-finite values propagate.

Example:
    tape = GradTape()
    w = tape.watch(np.eye(3))
    loss = sum_all(matmul(constant(x), w))
    grads = reverse_gradients(tape, loss)
    grads[w.node]
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, DimensionError, NormalizationError, NumericError

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

DEFAULT_LN_EPS = 1e-5


def _checked(data: np.ndarray, kind: str) -> np.ndarray:
    if data.ndim == 0:
        data = data.reshape(1)
    if any(dim <= 0 for dim in data.shape):
        raise DimensionError(f"{kind}: every dimension must be positive, got {data.shape}")
    if not np.isfinite(data).all():
        raise NumericError(f"{kind} produced non-finite values")
    data.setflags(write=False)
    return data


class Tensor:
    """Immutable row-major float64 array, optionally tracked on a tape"""

    __slots__ = ("_data", "node", "tape")

    def __init__(self, values, node: Optional[int] = None, tape: Optional["GradTape"] = None):
        self._data = _checked(np.array(values, dtype=np.float64), "tensor")
        self.node = node
        self.tape = tape

    @classmethod
    def _wrap(cls, data: np.ndarray, kind: str, node: Optional[int] = None,
              tape: Optional["GradTape"] = None) -> "Tensor":
        tensor = object.__new__(cls)
        tensor._data = _checked(np.asarray(data, dtype=np.float64), kind)
        tensor.node = node
        tensor.tape = tape
        return tensor

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values"""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def values(self) -> List[float]:
        """Values in row-major order"""
        return self._data.ravel().tolist()

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return np.array(self._data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self._data.ravel()[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data, "detach")

    def __repr__(self):
        flag = f" node={self.node}" if self.tracked else ""
        return f"<Tensor shape={self.shape}{flag}>"


TensorLike = Union[Tensor, np.ndarray, Sequence[float], float]


def constant(values: TensorLike) -> Tensor:
    """Untracked tensor"""
    if isinstance(values, Tensor):
        return values
    return Tensor(values)


@dataclass(frozen=True)
class TapeNode:
    """One recorded operation"""
    kind: str
    inputs: Tuple[Optional[int], ...]
    backward: Optional[Backward]
    shape: Tuple[int, ...]


class GradTape:
    """Append-only record of tracked operations

    Node ids are list positions, so inputs always precede outputs.
    One training step owns one tape.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, value: TensorLike) -> Tensor:
        """Register a leaf and return its tracked tensor"""
        source = value if isinstance(value, Tensor) else Tensor(value)
        node = self._append(TapeNode("leaf", (), None, source.shape))
        return Tensor._wrap(source.data, "leaf", node, self)

    def record(self, kind: str, inputs: Sequence[Optional[int]], backward: Backward,
               shape: Tuple[int, ...]) -> int:
        return self._append(TapeNode(kind, tuple(inputs), backward, shape))

    def leaves(self) -> List[int]:
        return [i for i, node in enumerate(self.nodes) if node.kind == "leaf"]

    def clear(self) -> None:
        self.nodes.clear()

    def _append(self, node: TapeNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


def _tape_of(inputs: Sequence[Tensor]) -> Optional[GradTape]:
    tape = None
    for tensor in inputs:
        if tensor.tape is None:
            continue
        if tape is None:
            tape = tensor.tape
        elif tensor.tape is not tape:
            raise ContractError("inputs are tracked on different tapes")
    return tape


def _result(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Backward) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor._wrap(out, kind)
    checked = _checked(np.asarray(out, dtype=np.float64), kind)
    node = tape.record(kind, [t.node for t in inputs], backward, checked.shape)
    return Tensor._wrap(checked, kind, node, tape)


def _require_matrix(tensor: Tensor, kind: str) -> None:
    if len(tensor.shape) != 2:
        raise DimensionError(f"{kind} needs a matrix, got shape {tensor.shape}")


def _require_same_shape(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


# --- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor"""
    _require_matrix(a, "matmul")
    _require_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} × {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        return g @ y.T, x.T @ g

    return _result("matmul", (a, b), x @ y, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _result("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _result("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product"""
    _require_same_shape(a, b, "mul")
    x, y = a.data, b.data
    return _result("mul", (a, b), x * y, lambda g: (g * y, g * x))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant"""
    factor = float(factor)
    if not np.isfinite(factor):
        raise NumericError(f"scale factor {factor} is not finite")
    return _result("scale", (a,), a.data * factor, lambda g: (g * factor,))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a (possibly tracked) single-value tensor"""
    if s.size != 1:
        raise DimensionError(f"scale_by needs a single value, got shape {s.shape}")
    x, factor = a.data, s.data.ravel()[0]
    s_shape = s.shape

    def backward(g):
        return g * factor, np.full(s_shape, np.sum(g * x))

    return _result("scale_by", (a, s), x * factor, backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result("exp", (a,), out, lambda g: (g * out,))


def transpose(a: Tensor) -> Tensor:
    _require_matrix(a, "transpose")
    return _result("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a matrix"""
    _require_matrix(a, "slice_cols")
    if not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: [{start}, {stop}) outside {a.shape[1]} columns")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _result("slice_cols", (a,), a.data[:, start:stop].copy(), backward)


def select_row(a: Tensor, i: int) -> Tensor:
    """Row i of a matrix, as 1×d"""
    _require_matrix(a, "select_row")
    if not 0 <= i < a.shape[0]:
        raise DimensionError(f"select_row: row {i} outside {a.shape[0]} rows")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[i] = g[0]
        return (full,)

    return _result("select_row", (a,), a.data[i:i + 1].copy(), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Join matrices with equal row counts side by side"""
    if not parts:
        raise DimensionError("concat_cols needs at least one tensor")
    for part in parts:
        _require_matrix(part, "concat_cols")
    rows = parts[0].shape[0]
    if any(part.shape[0] != rows for part in parts):
        raise DimensionError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [part.shape[1] for part in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    out = np.concatenate([part.data for part in parts], axis=1)
    return _result("concat_cols", tuple(parts), out, backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-width vectors or 1×d rows into a B×d matrix"""
    if not rows:
        raise DimensionError("stack_rows needs at least one row")
    width = rows[0].shape[-1]
    for row in rows:
        if row.size != width or row.shape[-1] != width:
            raise DimensionError(f"stack_rows: expected rows of width {width}, got {row.shape}")
    shapes = [row.shape for row in rows]

    def backward(g):
        return tuple(g[i].reshape(shapes[i]) for i in range(len(shapes)))

    out = np.stack([row.data.reshape(width) for row in rows])
    return _result("stack_rows", tuple(rows), out, backward)


def mean_rows(a: Tensor) -> Tensor:
    """Column means of an N×d matrix, as a 1×d row"""
    _require_matrix(a, "mean_rows")
    n, shape = a.shape[0], a.shape

    def backward(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result("mean_rows", (a,), a.data.mean(axis=0, keepdims=True), backward)


def diag(a: Tensor) -> Tensor:
    """Main diagonal of a square matrix"""
    _require_matrix(a, "diag")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"diag needs a square matrix, got {a.shape}")
    return _result("diag", (a,), np.diagonal(a.data).copy(), lambda g: (np.diag(g),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result("sum_all", (a,), np.array([a.data.sum()]),
                   lambda g: (np.full(shape, g[0]),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equally shaped tensors"""
    _require_same_shape(a, b, "dot")
    x, y = a.data, b.data
    return _result("dot", (a, b), np.array([np.sum(x * y)]),
                   lambda g: (g[0] * y, g[0] * x))


# --- normalisation ----------------------------------------------------------

def softmax_rows(m: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of scale·m, stabilised by subtracting the row max"""
    _require_matrix(m, "softmax_rows")
    if not scale > 0:
        raise ContractError(f"softmax scale must be positive, got {scale}")
    z = m.data * scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (scale * y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _result("softmax_rows", (m,), y, backward)


def log_softmax_rows(m: Tensor) -> Tensor:
    """Row-wise log-softmax via log-sum-exp"""
    _require_matrix(m, "log_softmax_rows")
    z = m.data - m.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _result("log_softmax_rows", (m,), y, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = DEFAULT_LN_EPS) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift"""
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({d},)")
    if eps < 0:
        raise ContractError(f"layer_norm eps must be non-negative, got {eps}")
    xs, gs, bs = x.data, gain.data, bias.data
    centered = xs - xs.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
    out = xhat * gs + bs

    def backward(g):
        dxhat = g * gs
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)

    return _result("layer_norm", (x, gain, bias), out, backward)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale every row to unit length"""
    _require_matrix(a, "l2_normalize_rows")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    if np.any(norms == 0):
        raise NormalizationError("cannot normalize a zero vector")
    y = a.data / norms

    def backward(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _result("l2_normalize_rows", (a,), y, backward)


# --- gradients -------------------------------------------------------------

def reverse_gradients(tape: GradTape, loss: Union[int, Tensor]) -> Dict[int, Tensor]:
    """Gradient of a scalar node with respect to every leaf on the tape

    Leaves the loss does not depend on get an all-zero gradient.
    """
    if isinstance(loss, Tensor):
        if loss.tape is not tape or loss.node is None:
            raise ContractError("loss tensor is not tracked on this tape")
        loss = loss.node
    if not 0 <= loss < len(tape.nodes):
        raise ContractError(f"node {loss} is not on the tape")
    loss_node = tape.nodes[loss]
    if int(np.prod(loss_node.shape)) != 1:
        raise ContractError(f"loss node must be scalar, has shape {loss_node.shape}")

    grads: Dict[int, np.ndarray] = {loss: np.ones(loss_node.shape)}
    for node_id in range(loss, -1, -1):
        g = grads.get(node_id)
        node = tape.nodes[node_id]
        if g is None or node.backward is None:
            continue
        for source, contribution in zip(node.inputs, node.backward(g)):
            if source is None or contribution is None:
                continue
            if source in grads:
                grads[source] = grads[source] + contribution
            else:
                grads[source] = contribution
        del grads[node_id]

    result = {}
    for leaf in tape.leaves():
        g = grads.get(leaf)
        if g is None:
            g = np.zeros(tape.nodes[leaf].shape)
        result[leaf] = Tensor._wrap(np.reshape(g, tape.nodes[leaf].shape), "gradient")
    return result


def named_gradients(tape: GradTape, loss: Tensor,
                    leaves: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """reverse_gradients keyed by parameter name"""
    by_node = reverse_gradients(tape, loss)
    return {name: by_node[tensor.node].data for name, tensor in leaves.items()}


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        value = value.item()
    value = float(value)
    if not np.isfinite(value):
        raise NumericError("function returned a non-finite value")
    return value


def finite_diff_gradient(f: Callable[[Tensor], Union[Tensor, float]], x: TensorLike,
                         h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function"""
    base = constant(x).numpy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = _as_float(f(Tensor(base)))
        flat[i] = original - h
        f_minus = _as_float(f(Tensor(base)))
        flat[i] = original
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor(grad)
