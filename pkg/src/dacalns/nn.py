"""Small reverse-mode autodiff on 2-D float64 arrays.

Every value is a matrix. Operations record a closure on the output tensor
when any input requires gradients and recording is enabled; ``backward``
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import hashlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphNotRecorded, NonFiniteInput, ShapeMismatch

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


def is_recording() -> bool:
    return _RECORDING


def _as_matrix(value) -> np.ndarray:
    v = np.array(value, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1, 1)
    elif v.ndim == 1:
        v = v.reshape(1, -1)
    elif v.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got shape {v.shape}")
    return v


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = _as_matrix(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.value.size != 1:
            raise ShapeMismatch("backward() needs a scalar (1x1) loss")
        if not self.requires_grad:
            raise GraphNotRecorded("loss has no recorded graph; was it built under no_grad?")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    return all(x == y or y == 1 or x == 1 for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a row vector or 1x1 operand is broadcast."""
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _make(
        av * bv, (a, b), lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape))
    )


def transpose(a: Tensor) -> Tensor:
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.value * c, (a,), lambda g: (g * c,))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ W + b with b broadcast over rows."""
    if x.cols != W.rows:
        raise ShapeMismatch(f"linear input {x.shape} vs weight {W.shape}")
    if b is not None and b.shape != (1, W.cols):
        raise ShapeMismatch(f"bias {b.shape} does not match weight {W.shape}")
    out = matmul(x, W)
    return out if b is None else add(out, b)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    return _make(e, (a,), lambda g: (g * e,))


def square(a: Tensor) -> Tensor:
    v = a.value
    return _make(v * v, (a,), lambda g: (2.0 * g * v,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = list(parts)
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeMismatch(f"concat along axis {axis}: {[p.shape for p in parts]}")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), back)


def max_rows(a: Tensor) -> Tensor:
    """Column-wise max over rows -> 1 x cols. Gradient goes to the first argmax."""
    if a.rows == 0:
        raise ShapeMismatch("max over an empty tensor")
    idx = np.argmax(a.value, axis=0)
    cols = np.arange(a.cols)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[idx, cols] = g[0]
        return (out,)

    return _make(a.value[idx, cols][None, :], (a,), back)


def pick(a: Tensor, i: int, j: int) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[i, j] = g[0, 0]
        return (out,)

    return _make(a.value[i : i + 1, j : j + 1].copy(), (a,), back)


def _check_finite(v: np.ndarray):
    if not np.isfinite(v).all():
        raise NonFiniteInput("softmax input contains non-finite entries")


def softmax_array(z, axis: int = -1) -> np.ndarray:
    """Stable softmax on a plain array."""
    z = np.asarray(z, dtype=np.float64)
    _check_finite(z)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    s = softmax_array(a.value, axis=axis)
    return _make(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = 1) -> Tensor:
    v = a.value
    _check_finite(v)
    shifted = v - v.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return _make(out, (a,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# parameters and optimizer


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class ParamStore:
    """Named trainable matrices with Adam moments and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self._flat: tuple | None = None

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        self._flat = None
        return t

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Values and moments as contiguous vectors; parameters become views."""
        if self._flat is None:
            names = list(self.params)
            sizes = [self.params[k].value.size for k in names]
            offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
            bufs = []
            for src in (
                {k: t.value for k, t in self.params.items()},
                self.m,
                self.v,
            ):
                buf = np.empty(offs[-1])
                for k, a, b in zip(names, offs[:-1], offs[1:]):
                    buf[a:b] = src[k].ravel()
                bufs.append(buf)
            for k, a, b in zip(names, offs[:-1], offs[1:]):
                shape = self.params[k].value.shape
                self.params[k].value = bufs[0][a:b].reshape(shape)
                self.m[k] = bufs[1][a:b].reshape(shape)
                self.v[k] = bufs[2][a:b].reshape(shape)
            self._flat = tuple(bufs)
        return self._flat

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.params.items():
            out.add(name, t.value.copy())
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.step_count = self.step_count
        return out


def optimizer_step(
    store: ParamStore,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    method: str = "adam",
):
    """One update from accumulated gradients, then clear them.

    Parameters without a gradient this step are left untouched (moments too).
    """
    if method not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {method!r}")
    store.step_count += 1
    t = store.step_count
    b1, b2 = betas
    grads = [p.grad for p in store.params.values()]
    if method == "adam" and grads and all(g is not None for g in grads):
        # same elementwise arithmetic as the per-parameter branch, one pass
        value, m, v = store.flat()
        g = np.concatenate([x.ravel() for x in grads])
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        value -= lr * mhat / (np.sqrt(vhat) + eps)
        store.zero_grad()
        return
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        if method == "sgd":
            p.value -= lr * g
        elif method == "adam":
            m = store.m[name]
            v = store.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.value -= lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = None


def grad_check(
    closure: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5
) -> float:
    """Max over parameters of ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf).

    ``closure`` rebuilds the scalar loss from the current parameter values.
    A tiny floor keeps the ratio defined when both gradients vanish.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = closure()
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            num = np.zeros_like(p.value)
            flat = p.value.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = closure().item()
                flat[k] = orig - h
                down = closure().item()
                flat[k] = orig
                num.reshape(-1)[k] = (up - down) / (2 * h)
            denom = max(np.abs(a).max(initial=0), np.abs(num).max(initial=0), 1e-12)
            worst = max(worst, float(np.abs(a - num).max(initial=0) / denom))
    for p in params:
        p.grad = None
    return worst
