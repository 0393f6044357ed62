"""Dense tensors with reverse-mode automatic differentiation, plus Adam.

Values live in row-major NumPy arrays (float64 by default, float32
selectable). Each op records its parents and a backward closure; calling
``Tensor.backward()`` on a scalar walks the tape once in reverse
topological order and accumulates d(loss)/d(leaf) into ``.grad`` of every
tensor that requires gradients. Gradient accumulation across shared
subexpressions is additive.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_DEFAULT_DTYPE = np.float64
_DEBUG_CHECKS = False


class _GradMode(threading.local):
    # thread-local so a no_grad() evaluation on one thread cannot strip the
    # tape from a concurrent forward on another
    enabled = True


_grad_mode = _GradMode()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def set_default_dtype(name: str) -> None:
    """Select the element type for newly created tensors: "float64" or "float32"."""
    global _DEFAULT_DTYPE
    if name not in ("float64", "float32"):
        raise ContractError(f"unsupported dtype {name!r}; use 'float64' or 'float32'")
    _DEFAULT_DTYPE = np.dtype(name).type


def default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op asserts its output is finite (slow, for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in this thread (inference / finite differences)."""
    prev = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


class Tensor:
    """A dense array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant tensor sharing this tensor's values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``.grad`` of every requires-grad tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return add(self, mul(other, -1.0))
    def __rsub__(self, other): return add(mul(self, -1.0), other)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not provided; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))
    def __matmul__(self, other): return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _finite_or_raise(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op {op!r}")


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG_CHECKS:
        _finite_or_raise(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_mode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing NumPy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _swap_last2(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# -- elementwise and linear algebra ------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product with NumPy stacking rules; dA = dY·Bᵀ, dB = Aᵀ·dY."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ _swap_last2(b.data), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(_swap_last2(a.data) @ g, b.data.shape))

    return _from_op(data, (a, b), backward, "matmul")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Swap the last two axes (default) or apply a full permutation."""
    x = _as_tensor(x)
    if axes is None:
        data = _swap_last2(x.data)

        def backward(g):
            if x.requires_grad:
                _accum(x, _swap_last2(g))
    else:
        inverse = tuple(np.argsort(axes))
        data = np.transpose(x.data, axes)

        def backward(g):
            if x.requires_grad:
                _accum(x, np.transpose(g, inverse))

    return _from_op(data, (x,), backward, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    old = x.data.shape
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            _accum(x, g.reshape(old))

    return _from_op(data, (x,), backward, "reshape")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                _accum(p, g[tuple(index)])

    return _from_op(data, parts, backward, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of size ``length`` along ``axis``; backward scatters."""
    x = _as_tensor(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            _accum(x, full)

    return _from_op(data, (x,), backward, "narrow")


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _from_op(data, (x,), backward, "sum")


def tmean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    scale = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            _accum(x, np.broadcast_to(g / scale, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg / scale, x.data.shape).copy())

    return _from_op(data, (x,), backward, "mean")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stable softmax over the last axis: subtract the row max before exp."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - inner))

    return _from_op(y, (x,), backward, "softmax_lastdim")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Uses the population variance with ``eps`` inside the square root.
    """
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _from_op(y, (x, gamma, beta), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """GELU under the tanh approximation: 0.5·x·(1 + tanh(c·(x + a·x³)))."""
    x = _as_tensor(x)
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data**2)
            dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
            _accum(x, g * dy)

    return _from_op(y, (x,), backward, "gelu")


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ContractError(f"Adam learning rate must be positive, got {lr}")
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    ``grads`` maps the same names to gradient arrays; a missing entry is
    treated as a zero gradient (the parameter still counts the step).
    """
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    state.step_count = t
    return state
