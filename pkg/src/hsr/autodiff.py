"""Reverse-mode automatic differentiation over numpy arrays.

A `Tape` records primitive operations as they execute; `Var` is a tape-bound
array value.  Nodes are appended in execution order, which is already a
topological order, so `backward` is a single reverse sweep that visits each
node exactly once.  Gradients are accumulated per node and returned for the
requested leaves; leaves the loss never touched get zeros.

Primitives cover elementwise arithmetic (with numpy-style broadcasting),
matrix products, row gathers / segment sums (for ragged neighbor batches),
row reductions, and the scalar nonlinearities the model needs.  Composite
manifold operations are built from these in `diffgeom`, so no hand-derived
adjoints exist for them; the finite-difference suite guards the whole chain.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .ball import ATANH_MAX, MIN_NORM, TANH_BOUND


class Var:
    """An array value recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("parents", "vjps")

    def __init__(self, parents: tuple[int, ...], vjps: tuple[Callable, ...]):
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Append-only record of primitive operations.

    Single-threaded during construction and backward; distinct tapes are
    independent and may run on distinct threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value) -> Var:
        """Register an input array (e.g. a trainable parameter)."""
        return self._record(np.asarray(value, dtype=np.float64), [])

    def _record(self, value: np.ndarray, pulls: list[tuple[Var, Callable]]) -> Var:
        parents = tuple(v.index for v, _ in pulls)
        vjps = tuple(fn for _, fn in pulls)
        self.nodes.append(_Node(parents, vjps))
        return Var(self, len(self.nodes) - 1, value)

    def backward(self, loss: Var) -> list[np.ndarray | None]:
        """Reverse sweep from a scalar loss; returns one adjoint per node.

        Entries are None for nodes the loss does not depend on.
        """
        if loss.tape is not self:
            raise ValueError("backward: loss recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        adjoints: list[np.ndarray | None] = [None] * (loss.index + 1)
        adjoints[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            if g is None:
                continue
            node = self.nodes[i]
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                if adjoints[parent] is None:
                    adjoints[parent] = contrib
                else:
                    adjoints[parent] = adjoints[parent] + contrib
        return adjoints

    def grad(self, loss: Var, wrt: list[Var]) -> list[np.ndarray]:
        """Euclidean gradients of a scalar loss for the given leaves (zeros if unused)."""
        adjoints = self.backward(loss)
        out = []
        for v in wrt:
            g = adjoints[v.index] if v.index < len(adjoints) else None
            out.append(np.zeros_like(v.value) if g is None else g)
        return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _split(a, b):
    """Lift a binary op's operands; at least one must be a Var."""
    if isinstance(a, Var):
        tape = a.tape
    elif isinstance(b, Var):
        tape = b.tape
    else:
        raise TypeError("at least one operand must be a Var")
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    return tape, av, bv


def add(a, b) -> Var:
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pulls.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return tape._record(av + bv, pulls)


def sub(a, b) -> Var:
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pulls.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return tape._record(av - bv, pulls)


def mul(a, b) -> Var:
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Var):
        pulls.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return tape._record(av * bv, pulls)


def div(a, b) -> Var:
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: _unbroadcast(g / bv, av.shape)))
    if isinstance(b, Var):
        pulls.append((b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))
    return tape._record(av / bv, pulls)


def neg(a: Var) -> Var:
    return a.tape._record(-a.value, [(a, lambda g: -g)])


def matmul(a, b) -> Var:
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: g @ bv.T))
    if isinstance(b, Var):
        pulls.append((b, lambda g: av.T @ g))
    return tape._record(av @ bv, pulls)


def matmul_t(a, b) -> Var:
    """a @ b.T for 2-D operands (rows of a against rows of b)."""
    tape, av, bv = _split(a, b)
    pulls = []
    if isinstance(a, Var):
        pulls.append((a, lambda g: g @ bv))
    if isinstance(b, Var):
        pulls.append((b, lambda g: g.T @ av))
    return tape._record(av @ bv.T, pulls)


def _scatter_add(idx: np.ndarray, rows: np.ndarray, num_rows: int) -> np.ndarray:
    """Sum `rows` into `num_rows` buckets (column-wise bincount)."""
    if rows.ndim == 1:
        return np.bincount(idx, weights=rows, minlength=num_rows)
    out = np.empty((num_rows,) + rows.shape[1:], dtype=np.float64)
    for j in range(rows.shape[1]):
        out[:, j] = np.bincount(idx, weights=rows[:, j], minlength=num_rows)
    return out


def gather_rows(x: Var, idx: np.ndarray) -> Var:
    """Index rows of a 2-D Var; the adjoint scatter-adds back."""
    idx = np.asarray(idx, dtype=np.intp)
    xv = x.value
    return x.tape._record(
        xv[idx], [(x, lambda g: _scatter_add(idx, g, xv.shape[0]))]
    )


def segment_sum(x: Var, seg: np.ndarray, num_segments: int) -> Var:
    """Sum rows of x into `num_segments` buckets given per-row segment ids."""
    seg = np.asarray(seg, dtype=np.intp)
    out = _scatter_add(seg, x.value, num_segments)
    return x.tape._record(out, [(x, lambda g: g[seg])])


def concat_cols(a: Var, b: Var) -> Var:
    """Concatenate two 2-D Vars along the column axis."""
    na = a.value.shape[1]
    val = np.concatenate([a.value, b.value], axis=1)
    return a.tape._record(
        val, [(a, lambda g: g[:, :na]), (b, lambda g: g[:, na:])]
    )


def row_sum(x: Var) -> Var:
    """Sum over the last axis, keepdims: (n, d) -> (n, 1)."""
    xv = x.value
    val = xv.sum(axis=-1, keepdims=True)
    return x.tape._record(val, [(x, lambda g: np.broadcast_to(g, xv.shape).copy())])


def total_sum(x: Var) -> Var:
    """Sum all entries to a scalar."""
    xv = x.value
    return x.tape._record(
        np.asarray(xv.sum()), [(x, lambda g: np.broadcast_to(g, xv.shape).copy())]
    )


def row_norm(x: Var) -> Var:
    """Euclidean norm over the last axis, keepdims.

    The adjoint uses x / max(||x||, MIN_NORM), which makes the gradient at
    the origin exactly zero (the subgradient chosen for distance at
    coincident points).
    """
    xv = x.value
    norm = np.sqrt(np.sum(xv * xv, axis=-1, keepdims=True))

    def pull(g):
        unit = np.where(norm >= MIN_NORM, xv / np.maximum(norm, MIN_NORM), 0.0)
        return g * unit

    return x.tape._record(norm, [(x, pull)])


def tanh(x: Var) -> Var:
    val = np.tanh(np.clip(x.value, -TANH_BOUND, TANH_BOUND))
    return x.tape._record(val, [(x, lambda g: g * (1.0 - val * val))])


def atanh(x: Var) -> Var:
    clipped = np.clip(x.value, 0.0, ATANH_MAX)
    val = np.arctanh(clipped)
    return x.tape._record(val, [(x, lambda g: g / (1.0 - clipped * clipped))])


def exp(x: Var) -> Var:
    val = np.exp(x.value)
    return x.tape._record(val, [(x, lambda g: g * val)])


def log(x: Var) -> Var:
    xv = x.value
    return x.tape._record(np.log(xv), [(x, lambda g: g / xv)])


def sigmoid(x: Var) -> Var:
    xv = x.value
    val = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))),
                   np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
    return x.tape._record(val, [(x, lambda g: g * val * (1.0 - val))])


def softplus(x: Var) -> Var:
    """log(1 + e^x), computed stably; adjoint is sigmoid(x)."""
    xv = x.value
    val = np.maximum(xv, 0.0) + np.log1p(np.exp(-np.abs(xv)))

    def pull(g):
        e = np.exp(-np.abs(xv))
        return g * np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    return x.tape._record(val, [(x, pull)])


def leaky_relu(x: Var, slope: float) -> Var:
    xv = x.value
    factor = np.where(xv > 0, 1.0, slope)
    return x.tape._record(xv * factor, [(x, lambda g: g * factor)])


def clip(x: Var, lo: float | None, hi: float | None) -> Var:
    """Clamp values; gradient flows only where the clamp is inactive."""
    xv = x.value
    val = np.clip(xv, lo, hi)
    inside = np.ones_like(xv)
    if lo is not None:
        inside = inside * (xv >= lo)
    if hi is not None:
        inside = inside * (xv <= hi)
    return x.tape._record(val, [(x, lambda g: g * inside)])
