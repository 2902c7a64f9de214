"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only what the model needs is here. Binary ops require identical shapes, with
one exception: a 1-D bias may be added across the rows of a matrix (or across
the last axis of a stacked tensor). Batched ``matmul`` over identical leading
dimensions is used for multi-head attention.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericsError(FloatingPointError):
    pass


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in this thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericsError("non-finite value in tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: BackwardFn | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, rows: slice):
        if not isinstance(rows, slice):
            raise TypeError("tensors support row slicing only")
        start, stop, step = rows.indices(self.shape[0])
        if step != 1:
            raise TypeError("strided slicing is not supported")
        return slice_rows(self, start, stop)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _not_scalar():
    raise ContractError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericsError("operation produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _result(a.data + b.data, (a, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)))
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth, so finite differences stay clean."""
    k = math.sqrt(2.0 / math.pi)
    xd = x.data
    inner = k * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def fn(g):
        dinner = k * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _result(out, (x,), fn)


# ------------------------------------------------------------------ structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ _swap(bd), _swap(ad) @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise DimensionError("transpose needs rank >= 2")
    return _result(_swap(a.data).copy(), (a,), lambda g: (_swap(g),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes).copy(), (a,), lambda g: (np.transpose(g, inv),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of nothing")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(ref) or other[:axis] + other[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise DimensionError(f"cannot concatenate {tuple(ref)} with {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise DimensionError(f"row slice [{start}, {stop}) invalid for {a.shape[0]} rows")
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _result(a.data[start:stop].copy(), (a,), fn)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("embedding ids must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError("embedding id out of range")
    shape = table.shape

    def fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(table.data[idx], (table,), fn)


# ------------------------------------------------------------------ reductions


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Sum of scalar tensors without building a chain of binary adds."""
    terms = list(terms)
    for t in terms:
        if t.data.size != 1:
            _not_scalar()
    total = np.array(sum(float(t.data) for t in terms))
    return _result(total, tuple(terms), lambda g: tuple(np.array(float(g)) for _ in terms))


# -------------------------------------------------------------------- softmax


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. ``mask`` marks blocked entries (True)."""
    xd = x.data
    if mask is not None:
        blocked = np.broadcast_to(mask, xd.shape)
        if blocked.all(axis=-1).any():
            raise ContractError("softmax row with every entry masked")
        shifted = np.where(blocked, -np.inf, xd)
        m = shifted.max(axis=-1, keepdims=True)
        e = np.where(blocked, 0.0, np.exp(shifted - m))
    else:
        e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), fn)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError("softmax_rows expects a matrix")
    return softmax(x)


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d)) V over the last two axes."""
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query/key width mismatch: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"key/value row mismatch: {K.shape} vs {V.shape}")
    d = Q.shape[-1]
    scores = scale(matmul(Q, transpose(K)), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, mask), V)


# -------------------------------------------------------------- normalization


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine shape mismatch for width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def fn(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _result(xhat * gd + bias.data, (x, gain, bias), fn)


# ---------------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a 1-D logit vector."""
    if logits.ndim != 1:
        raise DimensionError("cross_entropy expects a 1-D logit vector")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} outside [0, {n})")
    z = logits.data - logits.data.max()
    lse = math.log(np.exp(z).sum())
    p = np.exp(z - lse)

    def fn(g):
        grad = p.copy()
        grad[target] -= 1.0
        return (grad * float(g),)

    return _result(np.array(lse - z[target]), (logits,), fn)


def cross_entropy_rows(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over rows of per-row cross-entropy."""
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise DimensionError("need one target per logit row")
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if t.min() < 0 or t.max() >= c:
        raise IndexError("target index out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    p = np.exp(z - lse[:, None])
    rows = np.arange(n)
    loss = float((lse - z[rows, t]).mean())

    def fn(g):
        grad = p.copy()
        grad[rows, t] -= 1.0
        return (grad * (float(g) / n),)

    return _result(np.array(loss), (logits,), fn)


# ---------------------------------------------------------------------- autograd


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from a scalar loss.

    Gradients accumulate into existing ``.grad`` buffers.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_adam_step(params: Iterable[Parameter], lr: float, state: AdamState) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    params = list(params)
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for parameters: {', '.join(missing[:5])}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[p.name], state.v[p.name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState(lr=lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        sgd_adam_step(self.params, self.lr, self.state)
