"""Small reverse-mode autodiff over dense float64 arrays.

Only the operations the graph networks need are provided. A result records
its parents (and a backward closure) only when some input requires a
gradient, so evaluating with plain parameter copies builds no tape at all.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate gradients of ``self`` (seeded with ``grad``) into every leaf.

        The recorded tape is released afterwards, so a second call needs a new
        forward pass.
        """
        if self._backward is None:
            raise RuntimeError("no recorded forward pass to differentiate")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ValueError(f"grad shape {grad.shape} != value shape {self.data.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                k = id(parent)
                grads[k] = pg if k not in grads else grads[k] + pg
            node._parents = ()
            node._backward = None


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"width mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Sum with row broadcasting of ``b`` (bias vectors)."""
    def back(g):
        gb = g
        while gb.ndim > b.data.ndim:
            gb = gb.sum(axis=0)
        return g, gb
    return _result(a.data + b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def gather_rows(a: Tensor, index: np.ndarray, scatter=None) -> Tensor:
    """Rows ``a[index]``. ``scatter`` may hold a precomputed sparse (rows x len(index))
    incidence matrix used to accumulate the gradient."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        if scatter is not None:
            return (np.asarray(scatter @ g),)
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)
    return _result(a.data[index], (a,), back)


def segment_sum(a: Tensor, segment: np.ndarray, num_segments: int, pool=None) -> Tensor:
    """Row sums per segment; ``pool`` is an optional sparse (num_segments x rows) 0/1 matrix."""
    segment = np.asarray(segment, dtype=np.int64)
    if pool is not None:
        out = np.asarray(pool @ a.data).reshape((num_segments,) + a.shape[1:])
    else:
        out = np.zeros((num_segments,) + a.shape[1:])
        np.add.at(out, segment, a.data)
    return _result(out, (a,), lambda g: (g[segment],))


class SegmentLayout:
    """Grouping of rows sorted by segment id, shared by every segment_max call on it."""

    def __init__(self, segment: np.ndarray):
        segment = np.asarray(segment, dtype=np.int64)
        if np.any(np.diff(segment) < 0):
            raise ValueError("segment_max expects rows sorted by segment")
        self.segment = segment
        new = np.r_[True, segment[1:] != segment[:-1]] if len(segment) else np.zeros(0, bool)
        self.starts = np.flatnonzero(new)
        self.owners = segment[self.starts]
        self.group_of_row = np.cumsum(new) - 1
        self.singletons = len(self.starts) == len(segment)


def segment_max(a: Tensor, segment: np.ndarray, num_segments: int,
                layout: SegmentLayout | None = None) -> Tensor:
    """Element-wise maximum of the rows of ``a`` grouped by ``segment``.

    Rows must be sorted by segment. Among tied rows the earliest one wins (and
    receives the gradient); callers order rows within a segment by neighbour
    index. Segments without rows yield zeros.
    """
    lay = layout if layout is not None else SegmentLayout(segment)
    n, width = a.shape[0], a.shape[1]
    out = np.zeros((num_segments, width))
    if n == 0:
        return _result(out, (a,), lambda g: (np.zeros_like(a.data),))
    if lay.singletons:
        out[lay.owners] = a.data
        return _result(out, (a,), lambda g: (g[lay.owners],))
    peak = np.maximum.reduceat(a.data, lay.starts, axis=0)
    out[lay.owners] = peak

    def back(g):
        # route to the first row attaining the peak in each (segment, column)
        hit = a.data == peak[lay.group_of_row]
        run = np.cumsum(hit, axis=0)
        before = np.zeros_like(run[: len(lay.starts)])
        before[1:] = run[lay.starts[1:] - 1]
        first = hit & (run - before[lay.group_of_row] == 1)
        return (np.where(first, g[lay.segment], 0.0),)
    return _result(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),))


def mean_all(a: Tensor) -> Tensor:
    n = max(a.data.size, 1)
    return _result(np.array(a.data.mean() if a.data.size else 0.0), (a,),
                   lambda g: (np.full_like(a.data, g / n),))
