"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive builds a new :class:`Tensor` that remembers its inputs and
a backward rule.  :func:`backward` orders the graph reachable from a scalar
loss into a :class:`ComputationRecord` and replays it in reverse, summing
gradients into the ``grad`` buffers of leaf tensors.  Leaf gradients
accumulate across calls until :func:`zero_grad` is used.

Tensors are rank 1 or rank 2.  Batched sequence models stack the tokens of
every sample into one ``(batch * length, width)`` matrix; the ``group_*``
primitives then treat each consecutive block of ``length`` rows as one
sequence, which keeps the engine two-dimensional.

Post-op finiteness checks are on by default and can be switched off with
the ``INCIDENT_DETECT_CHECK_FINITE=0`` environment variable or
:func:`set_finite_checks`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import (
    DimensionError,
    NonFiniteError,
    NumericDomainError,
    PreconditionError,
)

LOG_CLAMP_EPS = 1e-7

_CHECK_FINITE = os.environ.get("INCIDENT_DETECT_CHECK_FINITE", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

# sigmoid saturates to exactly 0.0 / 1.0 in float64 otherwise
_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = 1.0 - np.finfo(np.float64).epsneg


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def finite_checks_enabled() -> bool:
    return _CHECK_FINITE


class Tensor:
    """A rank-1 or rank-2 float64 array that can take part in autodiff.

    Leaf tensors created by the user own a ``grad`` buffer once a backward
    pass reaches them.  Tensors produced by primitives carry the backward
    rule instead and never store gradients themselves.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim not in (1, 2):
            raise DimensionError(f"tensors must be rank 1 or 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise PreconditionError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # operator sugar; scalars route through ``affine``
    def __add__(self, other):
        if np.isscalar(other):
            return affine(self, 1.0, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return affine(self, 1.0, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        if np.isscalar(other):
            return affine(self, -1.0, float(other))
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return affine(self, float(other), 0.0)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("tensors only divide by scalars")
        return affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_rule: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        # inputs that were constants when the op ran stay constants
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward_rule
    else:
        # constants do not keep their history alive
        out._parents = ()
        out._backward = None
    return out


@dataclass
class ComputationRecord:
    """Primitive results reachable from an output, in execution-compatible order.

    Every entry appears after all of its inputs, so iterating the list in
    reverse visits each operation once with its full upstream gradient.
    """

    ops: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationRecord":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if node.is_leaf:
                continue
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent is not None and not parent.is_leaf and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.ops)


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        leaf.grad += g
    _check_finite(leaf.grad, "gradient accumulation")


def backward(loss: Tensor, record: ComputationRecord | None = None) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on.

    ``loss`` must hold exactly one value.  Gradients are added to whatever
    the leaves already hold.
    """
    if loss.data.size != 1:
        raise PreconditionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise PreconditionError("loss does not depend on any tensor with requires_grad=True")
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate_leaf(loss, seed)
        return
    if record is None:
        record = ComputationRecord.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(record.ops):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if parent is None or pg is None:
                continue
            if parent.is_leaf:
                _accumulate_leaf(parent, pg)
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily treat ``params`` as constants so no gradient reaches them."""
    params = list(params)
    previous = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, previous):
            p.requires_grad = flag


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=0, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == 2:
        n = a.shape[1]
        if b.shape in ((n,), (1, n)):
            return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def elementwise(op: str, a, b) -> Tensor:
    """``add``/``sub``/``mul`` with optional row-vector broadcasting of ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, op)
    if op == "add":
        out = a.data + b.data

        def rule(g):
            return g, _reduce_to(g, b.shape)

    elif op == "sub":
        out = a.data - b.data

        def rule(g):
            return g, _reduce_to(-g, b.shape)

    elif op == "mul":
        out = a.data * b.data
        need_a, need_b = a.requires_grad, b.requires_grad

        def rule(g):
            ga = g * b.data if need_a else None
            gb = _reduce_to(g * a.data, b.shape) if need_b else None
            return ga, gb

    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _make(out, (a, b), rule, op)


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * x + shift`` for python scalars."""
    x = as_tensor(x)
    out = x.data * scale + shift
    return _make(out, (x,), lambda g: (g * scale,), "affine")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def rule(g):
        ga = g @ b.data.T if need_a else None
        gb = a.data.T @ g if need_b else None
        return ga, gb

    return _make(out, (a, b), rule, "matmul")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(s, _SIGMOID_LO, _SIGMOID_HI)


def activation(kind: str, x) -> Tensor:
    x = as_tensor(x)
    if kind == "sigmoid":
        s = _sigmoid(x.data)
        return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")
    if kind == "tanh":
        t = np.tanh(x.data)
        return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")
    if kind == "relu":
        mask = x.data > 0
        return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x) -> Tensor:
    return activation("sigmoid", x)


def tanh(x) -> Tensor:
    return activation("tanh", x)


def relu(x) -> Tensor:
    return activation("relu", x)


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make(s, (x,), rule, "softmax_rows")


def reduce(kind: str, x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    if n == 0:
        raise PreconditionError(f"cannot {kind}-reduce an empty tensor")
    if kind == "sum":
        return _make(np.array([x.data.sum()]), (x,), lambda g: (np.full(x.shape, g[0]),), "sum")
    if kind == "mean":
        return _make(np.array([x.data.sum() / n]), (x,), lambda g: (np.full(x.shape, g[0] / n),), "mean")
    raise ValueError(f"unknown reduction {kind!r}")


def mean(x) -> Tensor:
    return reduce("mean", x)


def sum_all(x) -> Tensor:
    return reduce("sum", x)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise PreconditionError("concat_cols needs at least one part")
    rows = {p.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def rule(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _make(out, parts, rule, "concat_cols")


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if len(shape) not in (1, 2) or int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    return _make(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not 0 <= start <= stop <= x.shape[1]:
        raise DimensionError(f"slice_cols[{start}:{stop}] out of range for shape {x.shape}")

    def rule(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop].copy(), (x,), rule, "slice_cols")


def log_op(x, clamp: bool = True, eps: float = LOG_CLAMP_EPS) -> Tensor:
    """Natural log, by default of ``clip(x, eps, 1 - eps)``.

    The backward rule is ``1 / x_clamped`` everywhere, including clamped
    entries, so saturated probabilities still pass a gradient.
    """
    x = as_tensor(x)
    if clamp:
        xc = np.clip(x.data, eps, 1.0 - eps)
    else:
        if (x.data <= 0).any():
            raise NumericDomainError("log of a non-positive value with clamping disabled")
        xc = x.data
    return _make(np.log(xc), (x,), lambda g: (g / xc,), "log")


def layer_norm_rows(x, eps: float = 1e-5) -> Tensor:
    """Normalize every row to zero mean and unit (population) variance."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm_rows needs a matrix, got shape {x.shape}")
    n = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv

    def rule(g):
        gsum = g.sum(axis=1, keepdims=True)
        gy = (g * y).sum(axis=1, keepdims=True)
        return (inv * (g - gsum / n - y * gy / n),)

    return _make(y, (x,), rule, "layer_norm_rows")


def _groups(x: Tensor, length: int, op: str) -> int:
    if x.data.ndim != 2 or length < 1 or x.shape[0] % length:
        raise DimensionError(f"{op}: {x.shape[0]} rows do not split into groups of {length}")
    return x.shape[0] // length


def group_scores(q, k, length: int) -> Tensor:
    """Per-sequence ``Q Kᵀ``: rows ``(g, i)``, columns ``j`` within group ``g``."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape != k.shape:
        raise DimensionError(f"group_scores: query {q.shape} and key {k.shape} differ")
    G = _groups(q, length, "group_scores")
    d = q.shape[1]
    q3 = q.data.reshape(G, length, d)
    k3 = k.data.reshape(G, length, d)
    out = np.matmul(q3, k3.transpose(0, 2, 1)).reshape(G * length, length)
    need_q, need_k = q.requires_grad, k.requires_grad

    def rule(g):
        g3 = g.reshape(G, length, length)
        gq = np.matmul(g3, k3).reshape(q.shape) if need_q else None
        gk = np.matmul(g3.transpose(0, 2, 1), q3).reshape(k.shape) if need_k else None
        return gq, gk

    return _make(out, (q, k), rule, "group_scores")


def group_apply(weights, v, length: int) -> Tensor:
    """Per-sequence ``A V`` for stacked ``(G*L, L)`` weights and ``(G*L, d)`` values."""
    weights, v = as_tensor(weights), as_tensor(v)
    G = _groups(v, length, "group_apply")
    if weights.shape != (v.shape[0], length):
        raise DimensionError(f"group_apply: weights {weights.shape} do not match values {v.shape}")
    d = v.shape[1]
    a3 = weights.data.reshape(G, length, length)
    v3 = v.data.reshape(G, length, d)
    out = np.matmul(a3, v3).reshape(G * length, d)
    need_a, need_v = weights.requires_grad, v.requires_grad

    def rule(g):
        g3 = g.reshape(G, length, d)
        ga = np.matmul(g3, v3.transpose(0, 2, 1)).reshape(weights.shape) if need_a else None
        gv = np.matmul(a3.transpose(0, 2, 1), g3).reshape(v.shape) if need_v else None
        return ga, gv

    return _make(out, (weights, v), rule, "group_apply")


def group_mean(x, length: int) -> Tensor:
    """Average each block of ``length`` consecutive rows into one row."""
    x = as_tensor(x)
    G = _groups(x, length, "group_mean")
    d = x.shape[1]
    out = x.data.reshape(G, length, d).mean(axis=1)

    def rule(g):
        return (np.repeat(g / length, length, axis=0),)

    return _make(out, (x,), rule, "group_mean")


def feature_tokens(x, weights) -> Tensor:
    """Scale each feature's embedding row by the feature value.

    ``x`` is ``(B, n)``, ``weights`` is ``(n, d)``; row ``b*n + t`` of the
    result is ``x[b, t] * weights[t]``.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"feature_tokens: features {x.shape} do not match embedding {weights.shape}")
    B, n = x.shape
    d = weights.shape[1]
    out = (x.data[:, :, None] * weights.data[None, :, :]).reshape(B * n, d)
    need_x, need_w = x.requires_grad, weights.requires_grad

    def rule(g):
        g3 = g.reshape(B, n, d)
        gx = (g3 * weights.data[None]).sum(axis=2) if need_x else None
        gw = (g3 * x.data[:, :, None]).sum(axis=0) if need_w else None
        return gx, gw

    return _make(out, (x, weights), rule, "feature_tokens")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes the gradients afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise PreconditionError(f"parameter {i} (shape {p.shape}) has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params) or any(
        m.shape != p.shape for m, p in zip(state.first_moment, params)
    ):
        raise DimensionError("Adam moment buffers do not match the parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        _check_finite(p.data, "adam_step")
        p.grad[...] = 0.0


class Adam:
    """Adam bound to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, self.state)
