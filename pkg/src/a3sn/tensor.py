"""Dense f64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor`.  When at least one input has
``requires_grad`` set (and recording is not disabled by :func:`no_grad`), the
output keeps references to its inputs together with a closure that maps the
output gradient to input gradients.  :class:`ComputationTape` linearises that
graph and replays the closures in reverse.

Broadcasting is deliberately narrow: binary element-wise operations accept two
operands of identical shape, or one operand that is a scalar.  Row-vector
biases go through :func:`add_bias` instead.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .errors import (
    BackwardError,
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    EmptyInputError,
)

Operand = Union["Tensor", float, int, np.ndarray]

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out._consumed = False
        if _recording() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        ComputationTape(self).backward()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class ComputationTape:
    """Reverse topological ordering of the graph that produced ``root``.

    The tape is single-use: after :meth:`backward` every interior node drops
    its closure and is marked consumed, so replaying the same graph raises
    :class:`BackwardError`.
    """

    def __init__(self, root: Tensor):
        if root.data.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {root.shape}")
        self.root = root
        self.records: list[Tensor] = []
        if not root.requires_grad:
            return
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.records.append(node)
                continue
            if id(node) in seen:
                continue
            if node._consumed:
                raise BackwardError(f"graph node {node._op!r} was already used by a previous backward pass")
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.records)

    def backward(self) -> None:
        if not self.records:
            return
        pending: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.records):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
        for node in self.records:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True


def _as_operand(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape} (only equal shapes or a scalar operand)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _as_operand(a), _as_operand(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _as_operand(a), _as_operand(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)), "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    """Element-wise (Hadamard) product."""
    a, b = _as_operand(a), _as_operand(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor._result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values at or below ``floor`` are clamped and pass no gradient."""
    x = a.data
    if floor > 0:
        live = x > floor
        y = np.log(np.where(live, x, floor))
    else:
        live = np.ones_like(x, dtype=bool)
        y = np.log(x)
    safe = np.where(live, x, 1.0)
    return Tensor._result(y, (a,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor._result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return Tensor._result(y, (a,), lambda g: (g.reshape(old),), "reshape")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` to every row of ``x``."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    return Tensor._result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), backward, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},)")
    if eps <= 0:
        raise ConfigurationError(f"layer_norm eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(xhat * gd + beta.data, (x, gamma, beta), backward, "layer_norm")


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlate ``x[seq, d]`` with ``kernel[w, d, d_out]`` using zero padding."""
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d_same: kernel must be (width, d_in, d_out), got {kernel.shape}")
    width, d_in, d_out = kernel.shape
    if width % 2 == 0:
        raise ConfigurationError(f"conv1d_same needs an odd kernel width, got {width}")
    if x.ndim != 2 or x.shape[1] != d_in or bias.shape != (d_out,):
        raise DimensionError(f"conv1d_same: input {x.shape}, kernel {kernel.shape}, bias {bias.shape} disagree")
    seq = x.shape[0]
    pad = (width - 1) // 2
    xp = np.zeros((seq + 2 * pad, d_in))
    xp[pad : pad + seq] = x.data
    kd = kernel.data
    out = np.tile(bias.data, (seq, 1))
    for k in range(width):
        out += xp[k : k + seq] @ kd[k]

    def backward(g):
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for k in range(width):
            gk[k] = xp[k : k + seq].T @ g
            gxp[k : k + seq] += g @ kd[k].T
        return gxp[pad : pad + seq], gk, g.sum(axis=0)

    return Tensor._result(out, (x, kernel, bias), backward, "conv1d_same")


def mean_rows(x: Tensor, mask) -> Tensor:
    """Average the rows of ``x`` whose mask entry is non-zero."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if x.ndim != 2 or m.shape != (x.shape[0],):
        raise DimensionError(f"mean_rows: mask {m.shape} does not match rows of {x.shape}")
    sel = m != 0
    count = int(sel.sum())
    if count == 0:
        raise EmptyInputError("mean_rows: mask selects no rows")
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[sel] = g / count
        return (gx,)

    return Tensor._result(x.data[sel].mean(axis=0), (x,), backward, "mean_rows")


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds into it."""
    ids = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise DimensionError(f"take_rows: table {table.shape}, index {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"take_rows: index out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor._result(table.data[ids], (table,), backward, "take_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if not parts or any(p.ndim != 2 for p in parts) or len(rows) != 1:
        raise DimensionError(f"concat_cols: shapes {[p.shape for p in parts]} do not stack")
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]
    return Tensor._result(
        np.concatenate([p.data for p in parts], axis=1),
        tuple(parts),
        lambda g: tuple(np.split(g, bounds, axis=1)),
        "concat_cols",
    )


def pick(x: Tensor, i: int) -> Tensor:
    """Select element ``i`` of a vector as a scalar tensor."""
    if x.ndim != 1:
        raise DimensionError(f"pick expects a vector, got shape {x.shape}")
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[i] = g
        return (gx,)

    return Tensor._result(np.asarray(x.data[i]), (x,), backward, "pick")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def average(scalars: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors, reduced in the given order."""
    if not scalars:
        raise EmptyInputError("average of zero tensors")
    n = len(scalars)
    total = 0.0
    for s in scalars:
        total += s.item()
    return Tensor._result(np.asarray(total / n), tuple(scalars), lambda g: tuple(g / n for _ in range(n)), "average")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or ``rng`` is None."""
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    max_rel_error: float
    max_abs_error: float
    tol: float
    n_coords: int
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f: Callable,
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Check ``f``'s backward pass against central differences.

    ``f`` is called with ``x`` exactly as passed and must return a scalar
    tensor.  The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``,
    so coordinates whose gradient is below ``floor`` are effectively held to
    an absolute bound of ``tol * floor``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError(f"grad_check eps must lie in [1e-6, 1e-3], got {eps}")
    inputs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
    try:
        out = f(x)
        if out.data.size != 1:
            raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        out.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

        per_input = []
        max_rel = max_abs = 0.0
        n = 0
        with no_grad():
            for t, a in zip(inputs, analytic):
                flat = t.data.reshape(-1)
                worst = 0.0
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = float(f(x).data)
                    flat[i] = orig - eps
                    fm = float(f(x).data)
                    flat[i] = orig
                    num = (fp - fm) / (2.0 * eps)
                    ana = a.reshape(-1)[i]
                    err = abs(ana - num)
                    rel = err / max(abs(ana), abs(num), floor)
                    worst = max(worst, rel)
                    max_abs = max(max_abs, err)
                n += flat.size
                per_input.append(worst)
                max_rel = max(max_rel, worst)
    finally:
        for t, flag in zip(inputs, saved):
            t.requires_grad = flag
            t.grad = None
    return GradCheckReport(max_rel, max_abs, tol, n, per_input)
