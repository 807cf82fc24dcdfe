"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to tensors that require a
gradient while it is active. ``tape.backward(out)`` sweeps the record in
reverse and leaves the gradient of each leaf in ``leaf.grad``.

Outside an active tape the same functions just compute values, which is how
evaluation and validation passes run.

Convention: the subgradient of ``relu`` (max-with-zero) at exactly 0 is 0.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "einsum",
    "sum",
    "mean",
    "square",
    "softplus",
    "sigmoid",
    "silu",
    "relu",
    "clamp",
    "concat",
    "index",
    "transpose",
    "reshape",
    "custom",
    "finite_difference_check",
]


class ShapeError(ValueError):
    pass


class Tensor:
    """An array plus the bookkeeping needed to take gradients through it."""

    __slots__ = ("value", "requires_grad", "grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        self.value = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def tensor(value) -> Tensor:
    """Constant tensor (never receives a gradient)."""
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# --------------------------------------------------------------------------- tape

_state = threading.local()


def _active() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; tapes do not nest. Each entry is
    ``(output, inputs, vjp)`` where ``vjp(g)`` returns one adjoint (or None)
    per input. Entries are appended in execution order, so inputs always
    precede the node that consumes them.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if _active() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.entries.append((out, inputs, vjp))

    def backward(self, out: Tensor) -> None:
        if out.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
        produced = {id(node) for node, _, _ in self.entries}
        leaves: dict[int, Tensor] = {}
        for _, inputs, _ in self.entries:
            for inp in inputs:
                if inp.requires_grad and id(inp) not in produced:
                    leaves[id(inp)] = inp
        for leaf in leaves.values():
            leaf.grad = np.zeros_like(leaf.value)
        adj: dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
        for node, inputs, vjp in reversed(self.entries):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            grads = vjp(g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adj:
                    adj[key] = adj[key] + gi
                else:
                    adj[key] = gi
        # whatever adjoint remains belongs to a leaf (no producing entry)
        for key, g in adj.items():
            t = leaves.get(key)
            if t is None and key == id(out):
                t = out
            if t is not None:
                t.grad = np.array(np.broadcast_to(g, t.shape), dtype=np.float64)


def _make(value: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    tape = _active()
    out = Tensor(value, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "subtract")
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "multiply")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * av, b.shape) if b.requires_grad else None))


def neg(a) -> Tensor:
    a = tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy batching semantics (both operands >= 2-D)."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(av @ bv, (a, b), vjp)


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``'ij,jk->ik'``); no index repeated inside one operand."""
    ops = tuple(tensor(o) for o in operands)
    if "->" not in subscripts:
        raise ValueError("einsum needs an explicit '->' output")
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ValueError(f"einsum: {len(in_subs)} subscripts for {len(ops)} operands")
    sizes: dict[str, int] = {}
    for s, o in zip(in_subs, ops):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise ShapeError(f"einsum: subscript {s!r} does not fit operand of shape {o.shape}")
        for ch, n in zip(s, o.shape):
            if sizes.setdefault(ch, n) != n:
                raise ShapeError(f"einsum: index {ch!r} has extents {sizes[ch]} and {n} "
                                 f"(shapes {[o.shape for o in ops]})")
    vals = [o.value for o in ops]
    value = np.einsum(subscripts, *vals, optimize=len(ops) > 2)

    def vjp(g):
        grads = []
        for p, (s, o) in enumerate(zip(in_subs, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [in_subs[q] for q in range(len(ops)) if q != p]
            avail = set(out_sub).union(*others) if others else set(out_sub)
            keep = "".join(ch for ch in s if ch in avail)
            expr = ",".join([out_sub] + others) + "->" + keep
            gp = np.einsum(expr, g, *[vals[q] for q in range(len(ops)) if q != p],
                           optimize=len(ops) > 1)
            if keep != s:
                gp = np.broadcast_to(gp.reshape([sizes[ch] if ch in keep else 1 for ch in s]),
                                     o.shape)
            grads.append(np.ascontiguousarray(gp))
        return tuple(grads)

    return _make(value, ops, vjp)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[x] for x in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def square(a) -> Tensor:
    a = tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * av * g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus(a) -> Tensor:
    a = tensor(a)
    s = _sigmoid(a.value)
    return _make(_softplus(a.value), (a,), lambda g: (g * s,))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    s = _sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    a = tensor(a)
    x = a.value
    s = _sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def relu(a) -> Tensor:
    """max(a, 0); subgradient at exactly 0 is 0."""
    a = tensor(a)
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside."""
    a = tensor(a)
    inside = (a.value > lo) & (a.value < hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(tensor(t) for t in tensors)
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concatenate: incompatible shapes {ref} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            out.append(g[tuple(sl)] if t.requires_grad else None)
        return tuple(out)

    return _make(np.concatenate([t.value for t in ts], axis=ax), ts, vjp)


def index(a, key) -> Tensor:
    """Basic or integer-array indexing (slice)."""
    a = tensor(a)
    shape = a.shape

    basic = all(isinstance(k, (slice, int)) or k is None or k is Ellipsis
                for k in (key if isinstance(key, tuple) else (key,)))

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _make(a.value[key], (a,), vjp)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Reverse all axes, or permute by ``axes``."""
    a = tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = tensor(a)
    old = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(value, (a,), lambda g: (g.reshape(old),))


def custom(value: np.ndarray, inputs: Sequence, vjp: Callable) -> Tensor:
    """Register an externally computed primitive.

    ``vjp(g)`` must return one adjoint (or None) per input, in order.
    """
    return _make(np.asarray(value, dtype=np.float64), tuple(tensor(t) for t in inputs), vjp)


# ------------------------------------------------------------------------ checking

def finite_difference_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor. Raises
    FloatingPointError naming the coordinate if any evaluation is non-finite.
    """
    x0 = np.array(tensor(x).value, dtype=np.float64)
    leaf = parameter(x0.copy())
    with Tape() as tape:
        out = f(leaf)
    if not np.isfinite(out.value).all():
        raise FloatingPointError("non-finite output at the base point")
    tape.backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        vals = []
        for sign in (1.0, -1.0):
            xp = flat.copy()
            xp[i] += sign * step
            v = float(f(Tensor(xp.reshape(x0.shape))).value)
            if not np.isfinite(v):
                coord = tuple(int(c) for c in np.unravel_index(i, x0.shape))
                raise FloatingPointError(f"non-finite evaluation at coordinate {coord}")
            vals.append(v)
        fd = (vals[0] - vals[1]) / (2.0 * step)
        an = float(analytic.reshape(-1)[i])
        worst = max(worst, abs(an - fd) / max(1.0, abs(an)))
    return worst

