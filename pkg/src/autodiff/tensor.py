"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 matrix of shape ``(rows, cols)``. Operations are
methods of :class:`Tape`; each one computes its forward value eagerly and, when
an input requires gradients, records a closure that maps the output gradient
to input gradients. :meth:`Tape.backward` replays the record in reverse.
"""

from collections.abc import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from errors import ContractError, NumericalError, ShapeError


Array = NDArray[np.float64]
BackwardFn = Callable[[Array], None]


class Tensor:
    __slots__ = ("_backward", "grad", "name", "requires_grad", "value")

    def __init__(self, value: ArrayLike, *, requires_grad: bool = False, name: str = "") -> None:
        array = np.array(value, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:  # noqa: PLR2004
            msg = f"Tensor {name or '<anonymous>'} must be at most 2-D, got shape {array.shape}"
            raise ShapeError(msg)
        self.value: Array = array
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Array | None = np.zeros_like(array) if requires_grad else None
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, int]:
        rows, cols = self.value.shape
        return rows, cols

    def item(self) -> float:
        if self.shape != (1, 1):
            msg = f"item() needs a 1x1 tensor, got {self.shape}"
            raise ContractError(msg)
        return float(self.value[0, 0])

    def numpy(self) -> Array:
        return self.value

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value: ArrayLike, name: str = "") -> Tensor:
    return Tensor(value, requires_grad=False, name=name)


def _label(t: Tensor) -> str:
    return f"{t.name or 'tensor'}{t.shape}"


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, int]:
    rows = []
    for da, db in zip(a.shape, b.shape, strict=True):
        if da == db or db == 1:
            rows.append(da)
        elif da == 1:
            rows.append(db)
        else:
            msg = f"{op}: incompatible shapes {_label(a)} and {_label(b)}"
            raise ShapeError(msg)
    return rows[0], rows[1]


def _unbroadcast(grad: Array, shape: tuple[int, int]) -> Array:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def softmax_rows(x: Array) -> Array:
    shifted = x - x.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax_rows(x: Array) -> Array:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Tape:
    """Ordered record of the operations of one forward/backward flow.

    Parameters
    ----------
    record : bool, optional
        When False nothing is recorded and outputs never require gradients;
        used for forward-only evaluation over a shared parameter snapshot.
    """

    def __init__(self, *, record: bool = True) -> None:
        self.record = record
        self._nodes: list[Tensor] = []
        self._node_ids: set[int] = set()
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def _emit(self, op: str, value: Array, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        if not np.isfinite(value).all():
            msg = f"{op} produced non-finite values"
            raise NumericalError(msg)
        requires = self.record and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.value = value
        out.name = op
        out.requires_grad = requires
        out.grad = None
        out._backward = None
        if requires:
            out._backward = backward
            self._nodes.append(out)
            self._node_ids.add(id(out))
        return out

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            msg = f"matmul: {_label(a)} @ {_label(b)}"
            raise ShapeError(msg)

        def backward(g: Array) -> None:
            _accumulate(a, g @ b.value.T)
            _accumulate(b, a.value.T @ g)

        return self._emit("matmul", a.value @ b.value, (a, b), backward)

    def transpose(self, a: Tensor) -> Tensor:
        def backward(g: Array) -> None:
            _accumulate(a, g.T)

        return self._emit("transpose", np.ascontiguousarray(a.value.T), (a,), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("add", a, b)

        def backward(g: Array) -> None:
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(g, b.shape))

        return self._emit("add", a.value + b.value, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("sub", a, b)

        def backward(g: Array) -> None:
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(-g, b.shape))

        return self._emit("sub", a.value - b.value, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise product; either operand may be a row or column vector."""
        _broadcast_shape("mul", a, b)

        def backward(g: Array) -> None:
            _accumulate(a, _unbroadcast(g * b.value, a.shape))
            _accumulate(b, _unbroadcast(g * a.value, b.shape))

        return self._emit("mul", a.value * b.value, (a, b), backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        def backward(g: Array) -> None:
            _accumulate(a, g * factor)

        return self._emit("scale", a.value * factor, (a,), backward)

    def concat(self, tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not tensors:
            msg = "concat: no operands"
            raise ContractError(msg)
        other = 1 - axis
        widths = {t.shape[other] for t in tensors}
        if len(widths) != 1:
            msg = f"concat(axis={axis}): mismatched operands {', '.join(_label(t) for t in tensors)}"
            raise ShapeError(msg)
        sizes = [t.shape[axis] for t in tensors]
        bounds = np.cumsum(sizes)[:-1]

        def backward(g: Array) -> None:
            for t, part in zip(tensors, np.split(g, bounds, axis=axis), strict=True):
                _accumulate(t, part)

        return self._emit("concat", np.concatenate([t.value for t in tensors], axis=axis), tensors, backward)

    def gather_rows(self, a: Tensor, indices: Sequence[int] | NDArray[np.int64]) -> Tensor:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            msg = f"gather_rows: need a non-empty 1-D index list for {_label(a)}"
            raise ContractError(msg)
        if idx.min() < 0 or idx.max() >= a.shape[0]:
            msg = f"gather_rows: index out of range for {_label(a)}"
            raise ShapeError(msg)

        def backward(g: Array) -> None:
            full = np.zeros_like(a.value)
            np.add.at(full, idx, g)
            _accumulate(a, full)

        return self._emit("gather_rows", a.value[idx], (a,), backward)

    def pick(self, a: Tensor, columns: Sequence[int] | NDArray[np.int64]) -> Tensor:
        """Select one column per row, giving a column vector."""
        cols = np.asarray(columns, dtype=np.int64)
        if cols.shape != (a.shape[0],):
            msg = f"pick: need one column per row of {_label(a)}, got {cols.shape}"
            raise ShapeError(msg)
        rows = np.arange(a.shape[0])

        def backward(g: Array) -> None:
            full = np.zeros_like(a.value)
            full[rows, cols] = g[:, 0]
            _accumulate(a, full)

        return self._emit("pick", a.value[rows, cols][:, None], (a,), backward)

    def row_sum(self, a: Tensor) -> Tensor:
        def backward(g: Array) -> None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

        return self._emit("row_sum", a.value.sum(axis=1, keepdims=True), (a,), backward)

    def total(self, a: Tensor) -> Tensor:
        def backward(g: Array) -> None:
            _accumulate(a, np.full(a.shape, g[0, 0]))

        return self._emit("total", np.array([[a.value.sum()]]), (a,), backward)

    # -- nonlinearities ---------------------------------------------------

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0

        def backward(g: Array) -> None:
            _accumulate(a, g * mask)

        return self._emit("relu", a.value * mask, (a,), backward)

    def log(self, a: Tensor) -> Tensor:
        if (a.value <= 0).any():
            msg = f"log: non-positive entries in {_label(a)}"
            raise ContractError(msg)

        def backward(g: Array) -> None:
            _accumulate(a, g / a.value)

        return self._emit("log", np.log(a.value), (a,), backward)

    def row_softmax(self, a: Tensor) -> Tensor:
        probs = softmax_rows(a.value)

        def backward(g: Array) -> None:
            _accumulate(a, probs * (g - (g * probs).sum(axis=1, keepdims=True)))

        return self._emit("row_softmax", probs, (a,), backward)

    def scaled_softmax(self, a: Tensor, temperature: float) -> Tensor:
        """Row softmax of ``a / temperature``."""
        if temperature <= 0:
            msg = f"scaled_softmax: temperature must be positive, got {temperature}"
            raise ContractError(msg)
        probs = softmax_rows(a.value / temperature)

        def backward(g: Array) -> None:
            _accumulate(a, probs * (g - (g * probs).sum(axis=1, keepdims=True)) / temperature)

        return self._emit("scaled_softmax", probs, (a,), backward)

    def row_log_softmax(self, a: Tensor) -> Tensor:
        log_probs = log_softmax_rows(a.value)
        probs = np.exp(log_probs)

        def backward(g: Array) -> None:
            _accumulate(a, g - probs * g.sum(axis=1, keepdims=True))

        return self._emit("row_log_softmax", log_probs, (a,), backward)

    # -- distances and normalisation --------------------------------------

    def neg_sq_euclidean(self, a: Tensor, b: Tensor) -> Tensor:
        """Pairwise ``-||a_i - b_j||^2`` as an ``(a.rows, b.rows)`` matrix."""
        if a.shape[1] != b.shape[1]:
            msg = f"neg_sq_euclidean: {_label(a)} vs {_label(b)}"
            raise ShapeError(msg)
        diff = a.value[:, None, :] - b.value[None, :, :]
        value = -(diff**2).sum(axis=2)

        def backward(g: Array) -> None:
            _accumulate(a, -2.0 * (g.sum(axis=1, keepdims=True) * a.value - g @ b.value))
            _accumulate(b, -2.0 * (g.sum(axis=0)[:, None] * b.value - g.T @ a.value))

        return self._emit("neg_sq_euclidean", value, (a, b), backward)

    def neg_distance_paired(self, a: Tensor, b: Tensor, *, squared: bool = True, eps: float = 1e-12) -> Tensor:
        """Row-aligned negative distance ``-d(a_i, b_i)`` as a column vector."""
        if a.shape != b.shape:
            msg = f"neg_distance_paired: {_label(a)} vs {_label(b)}"
            raise ShapeError(msg)
        diff = a.value - b.value
        sq = (diff**2).sum(axis=1, keepdims=True)
        if squared:
            value = -sq

            def backward(g: Array) -> None:
                _accumulate(a, -2.0 * g * diff)
                _accumulate(b, 2.0 * g * diff)

        else:
            dist = np.sqrt(sq + eps)
            value = -dist

            def backward(g: Array) -> None:
                _accumulate(a, -g * diff / dist)
                _accumulate(b, g * diff / dist)

        return self._emit("neg_distance_paired", value, (a, b), backward)

    def layer_norm(self, x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
        width = x.shape[1]
        if gain.shape != (1, width) or shift.shape != (1, width):
            msg = f"layer_norm: {_label(x)} with gain {gain.shape} and shift {shift.shape}"
            raise ShapeError(msg)
        mean = x.value.mean(axis=1, keepdims=True)
        centered = x.value - mean
        inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
        normed = centered * inv_std

        def backward(g: Array) -> None:
            _accumulate(gain, (g * normed).sum(axis=0, keepdims=True))
            _accumulate(shift, g.sum(axis=0, keepdims=True))
            g_norm = g * gain.value
            _accumulate(
                x,
                inv_std
                * (
                    g_norm
                    - g_norm.mean(axis=1, keepdims=True)
                    - normed * (g_norm * normed).mean(axis=1, keepdims=True)
                ),
            )

        return self._emit("layer_norm", normed * gain.value + shift.value, (x, gain, shift), backward)

    def kl_term(self, log_p: Tensor, log_q: Tensor) -> Tensor:
        """Summed ``KL(p || q)`` over rows, both given as row log-distributions."""
        if log_p.shape != log_q.shape:
            msg = f"kl_term: {_label(log_p)} vs {_label(log_q)}"
            raise ShapeError(msg)
        p = np.exp(log_p.value)
        gap = log_p.value - log_q.value

        def backward(g: Array) -> None:
            scale = g[0, 0]
            _accumulate(log_p, scale * p * (gap + 1.0))
            _accumulate(log_q, -scale * p)

        return self._emit("kl_term", np.array([[(p * gap).sum()]]), (log_p, log_q), backward)

    # -- reverse pass -----------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every gradient-requiring leaf reached by ``loss``.

        Raises
        ------
        ContractError
            If the loss is not 1x1, was not produced on this tape, or the tape
            was already replayed.
        """
        if loss.shape != (1, 1):
            msg = f"backward needs a scalar loss, got shape {loss.shape}"
            raise ContractError(msg)
        if self._consumed:
            msg = "tape already replayed; record a new forward pass"
            raise ContractError(msg)
        if not loss.requires_grad:
            self._consumed = True
            return
        if id(loss) not in self._node_ids:
            msg = "loss was not recorded on this tape"
            raise ContractError(msg)
        self._consumed = True
        loss.grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
            node.grad = None
            node._backward = None
        self._nodes.clear()
        self._node_ids.clear()


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)
