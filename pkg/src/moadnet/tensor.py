"""Dense float64 tensors with a small reverse-mode differentiation engine.

Only the operations the fusion pipeline needs are provided. Every
operation records its parents and a closure mapping the output gradient to
parent gradients; :func:`backward` replays the recorded nodes in exact
reverse construction order.
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ParameterError",
    "ContractError",
    "tensor",
    "backward",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "elu",
    "relu",
    "leaky_relu",
    "softmax",
    "log_softmax",
    "activation",
    "sum",
    "mean",
    "reshape",
    "concat",
    "broadcast_rows",
    "weighted_sum",
    "take",
    "cumprod",
    "conv2d",
    "dropout",
    "alpha_dropout",
    "first_nonfinite",
    "make_rng",
    "split_rng",
]

# SELU fixed point: alpha' = -lambda * alpha
ALPHA_PRIME = -1.7580993408473766


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ParameterError(ValueError):
    """Raised for out-of-range operation parameters."""


class ContractError(RuntimeError):
    """Raised when a caller breaks an engine contract (e.g. non-scalar loss)."""


_counter = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array that optionally participates in a compute graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_id")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._id = next(_counter)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        out._op = op
        out._id = next(_counter)
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, inputs: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add onto whatever is already stored, so calling twice without
    resetting doubles them. Leaves listed in ``inputs`` that the loss does
    not reach receive an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes or not t.requires_grad:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)

    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg

    if inputs is not None:
        for leaf in inputs:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def first_nonfinite(root: Tensor) -> Tensor | None:
    """Earliest-constructed tensor in ``root``'s graph holding a NaN or Inf."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen[t._id] = t
        stack.extend(t._parents)
    for node_id in sorted(seen):
        t = seen[node_id]
        if not np.all(np.isfinite(t.data)):
            return t
    return None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return Tensor._from_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b, rowwise: bool = False) -> Tensor:
    """Matrix product of an ``m x k`` and a ``k x n`` tensor.

    With ``rowwise=True`` each output row is computed independently of the
    other rows, so reordering or repeating rows of ``a`` reorders or repeats
    output rows bit-for-bit. BLAS gives no such guarantee.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.einsum("mk,kn->mn", ad, bd) if rowwise else ad @ bd
    return Tensor._from_op(out, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


# ---------------------------------------------------------------- activations


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = _sigmoid_np(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elu(x, alpha: float = 1.0) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    neg_part = alpha * np.expm1(np.minimum(xd, 0.0))
    out = np.where(xd > 0, xd, neg_part)
    return Tensor._from_op(
        out, (x,), lambda g: (g * np.where(xd > 0, 1.0, neg_part + alpha),), "elu"
    )


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    # subgradient at 0 takes the positive branch
    scale = np.where(x.data >= 0, 1.0, slope)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def softmax(x, exact: bool = False) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction.

    ``exact`` (vectors only) normalizes with a correctly rounded sum, making
    the result independent of element order.
    """
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if exact:
        if x.ndim != 1:
            raise ShapeError(f"exact softmax expects a vector, got {x.shape}")
        out = e / math.fsum(e)
    else:
        out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (x,), bw, "softmax")


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return Tensor._from_op(
        out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax"
    )


_ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "elu": elu,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "softmax_lastdim": softmax,
    "softmax": softmax,
}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- shape ops


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(out, (x,), bw, "sum")


def mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return sum(x, axis) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    return Tensor._from_op(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape"
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in ts]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, ts, bw, "concat")


def weighted_sum(weights, rows) -> Tensor:
    """``sum_j weights[j] * rows[j]`` with correctly rounded (order-free) sums."""
    weights, rows = _as_tensor(weights), _as_tensor(rows)
    if weights.ndim != 1 or rows.ndim != 2 or rows.shape[0] != weights.shape[0]:
        raise ShapeError(f"weighted_sum shape mismatch: {weights.shape} and {rows.shape}")
    wd, rd = weights.data, rows.data
    prod = wd[:, None] * rd
    out = np.array([math.fsum(col) for col in prod.T])
    return Tensor._from_op(out, (weights, rows), lambda g: (rd @ g, np.outer(wd, g)), "weighted_sum")


def broadcast_rows(x, n: int) -> Tensor:
    """Replicate a vector into ``n`` identical rows."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got {x.shape}")
    out = np.broadcast_to(x.data, (n, x.shape[0])).copy()
    return Tensor._from_op(out, (x,), lambda g: (g.sum(axis=0),), "broadcast_rows")


def take(x, index) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(x.data[index], (x,), bw, "take")


def cumprod(x) -> Tensor:
    """Running product along the last axis."""
    x = _as_tensor(x)
    xd = x.data
    out = np.cumprod(xd, axis=-1)
    n = xd.shape[-1]

    def bw(g):
        # d out_k / d x_j = prod_{i<=k, i!=j} x_i, computed without division
        gx = np.zeros_like(xd)
        for j in range(n):
            others = xd.copy()
            others[..., j] = 1.0
            partial = np.cumprod(others, axis=-1)
            gx[..., j] = (g[..., j:] * partial[..., j:]).sum(axis=-1)
        return (gx,)

    return Tensor._from_op(out, (x,), bw, "cumprod")


# ---------------------------------------------------------------- conv


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a ``C_in x H x W`` input with ``C_out x C_in x kh x kw``."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"invalid stride={stride} / padding={padding}")
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"non-integral conv2d output size for input {x.shape}, kernel {kernel.shape}, "
            f"stride {stride}, padding {padding}"
        )
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    kd = kernel.data

    def window(arr, i, j):
        return arr[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]

    out = np.zeros((c_out, ho, wo))
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(kd[:, :, i, j], window(xp, i, j), axes=(1, 0))

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kd)
        for i in range(kh):
            for j in range(kw):
                gk[:, :, i, j] = np.tensordot(g, window(xp, i, j), axes=((1, 2), (1, 2)))
                window(gxp, i, j)[...] += np.tensordot(kd[:, :, i, j], g, axes=(0, 0))
        gx = gxp[:, padding : padding + h, padding : padding + w]
        return gx, gk

    return Tensor._from_op(out, (x, kernel), bw, "conv2d")


# ---------------------------------------------------------------- dropout


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; the only randomness source used."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from ``rng``."""
    return [np.random.Generator(bg) for bg in _spawn(rng, n)]


def _spawn(rng: np.random.Generator, n: int):
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [np.random.Philox(int(s)) for s in seeds]


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training."""
    x = _as_tensor(x)
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def alpha_dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Dropout that keeps zero-mean unit-variance inputs self-normalized.

    Dropped units are set to ``ALPHA_PRIME`` and the result is rescaled by
    ``a * x + b`` so the first two moments are preserved in expectation.
    """
    x = _as_tensor(x)
    if not 0 <= p < 1:
        raise ParameterError(f"alpha dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    q = 1.0 - p
    a = (q + ALPHA_PRIME**2 * q * p) ** -0.5
    b = -a * p * ALPHA_PRIME
    keep = rng.random(x.shape) >= p
    out = a * np.where(keep, x.data, ALPHA_PRIME) + b
    scale = a * keep
    return Tensor._from_op(out, (x,), lambda g: (g * scale,), "alpha_dropout")
