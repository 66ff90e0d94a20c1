"""N-d tensors with reverse-mode automatic differentiation.

Everything the mask head trains with is expressed through the ops in this
module: each op computes its forward value with numpy (float64 throughout)
and records a backward closure on the output tensor.  Calling
:func:`backward` on a scalar loss replays those closures in reverse
topological order, accumulating into ``.grad`` slots until they are
explicitly cleared (by :func:`sgd_step` or ``ParameterSet.zero_grad``).

Tensors are immutable after creation except for their grad slot; a graph
and its tensors belong to one worker.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from aisf.errors import ContractError, DimensionError

TensorLike = Union["Tensor", np.ndarray, float, int]

# Graph recording switch. Per the concurrency model a graph is confined to a
# single worker; this flag is only ever toggled by the owning worker (finite
# difference loops, evaluation).
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values unchanged)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus an optional gradient and graph lineage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _non_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the functions below do the real work.
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def _non_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own the buffer
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor with requires_grad.

    Repeated calls without clearing accumulate (gradients add linearly).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative topological order over grad-requiring nodes.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# broadcasting helpers

def _check_broadcast(sa: tuple, sb: tuple) -> None:
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"shapes {sa} and {sb} do not broadcast")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def back(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), back)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def back(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), back)


def elementwise(a: TensorLike, b: TensorLike, kind: str) -> Tensor:
    """Broadcasting add/mul by name (thin alias over add/mul)."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra / structure

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs [m,k] x [k,n], got {a.shape} and {b.shape}")

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def back(g):
        _accumulate(a, g.T)

    return _make(np.ascontiguousarray(a.data.T), (a,), back)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc

    def back(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), back)


def concat(parts: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat needs at least one part")
    ref = parts[0].shape
    nd = len(ref)
    if not -nd <= axis < nd:
        raise DimensionError(f"concat axis {axis} out of range for shape {ref}")
    axis = axis % nd
    for p in parts[1:]:
        s = p.shape
        if len(s) != nd or any(i != axis and s[i] != ref[i] for i in range(nd)):
            raise DimensionError(f"concat shapes {ref} and {s} differ off axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * nd
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def narrow(a: TensorLike, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis` (gradient scatters back)."""
    a = as_tensor(a)
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"narrow axis {axis} out of range for shape {a.shape}")
    axis = axis % nd
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}] exceeds axis {axis} of shape {a.shape}")
    idx = [slice(None)] * nd
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def back(g):
        full = np.zeros(a.shape)
        full[idx] = g
        _accumulate(a, full)

    return _make(a.data[idx], (a,), back)


def sum_(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def back(g):
        _accumulate(a, g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)

    def back(g):
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), back)


def activation(a: TensorLike, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ContractError(f"unknown activation kind {kind!r}")


def softmax(a: TensorLike, axis: int) -> Tensor:
    a = as_tensor(a)
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), back)


def layer_norm(x: TensorLike, last_axis_size: int, gain: TensorLike, bias: TensorLike,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.shape[-1] != last_axis_size:
        raise DimensionError(f"layer_norm expected last axis {last_axis_size}, got {x.shape}")
    if gain.shape != (last_axis_size,) or bias.shape != (last_axis_size,):
        raise DimensionError("layer_norm gain/bias must be 1-d of the last axis size")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, dx)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), back)


def bce_with_logits(logits: TensorLike, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over all elements, stable log-sum-exp form."""
    z = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != z.shape:
        raise DimensionError(f"targets shape {t.shape} != logits shape {z.shape}")
    val = np.maximum(z.data, 0.0) - z.data * t + np.log1p(np.exp(-np.abs(z.data)))
    n = z.data.size

    def back(g):
        _accumulate(z, g * (_sigmoid(z.data) - t) / n)

    return _make(np.asarray(val.mean()), (z,), back)


# ---------------------------------------------------------------------------
# spatial ops (channel-first [C, H, W])

def conv2d(x: TensorLike, w: TensorLike, b: Optional[TensorLike] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, weight layout [C_out, C_in, kh, kw]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.shape[0] != w.shape[1]:
        raise DimensionError(f"conv2d got input {x.shape}, weight {w.shape}")
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    out = np.einsum("cijpq,ocpq->oij", win, w.data, optimize=True)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {b.shape}, expected ({cout},)")
        out = out + b.data[:, None, None]
        parents.append(b)

    def back(g):
        _accumulate(w, np.einsum("cijpq,oij->ocpq", win, g, optimize=True))
        if b is not None:
            _accumulate(b, g.sum(axis=(1, 2)))
        dxp = np.zeros_like(xp)
        for p in range(kh):
            for q in range(kw):
                dxp[:, p:p + stride * oh:stride, q:q + stride * ow:stride] += \
                    np.einsum("oij,oc->cij", g, w.data[:, :, p, q], optimize=True)
        if padding:
            dxp = dxp[:, padding:padding + h, padding:padding + wd]
        _accumulate(x, dxp)

    return _make(np.ascontiguousarray(out), parents, back)


def deconv2x2(x: TensorLike, w: TensorLike, b: Optional[TensorLike] = None) -> Tensor:
    """Transposed conv, kernel 2x2 stride 2: spatially doubles the input.

    Weight layout [C_in, C_out, 2, 2]; stride equals the kernel so output
    taps never overlap.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[2:] != (2, 2) \
            or x.shape[0] != w.shape[0]:
        raise DimensionError(f"deconv2x2 got input {x.shape}, weight {w.shape}")
    cin, h, wd = x.shape
    cout = w.shape[1]
    y6 = np.einsum("chw,copq->ohpwq", x.data, w.data, optimize=True)
    out = y6.reshape(cout, 2 * h, 2 * wd)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"deconv2x2 bias shape {b.shape}, expected ({cout},)")
        out = out + b.data[:, None, None]
        parents.append(b)

    def back(g):
        g6 = g.reshape(cout, h, 2, wd, 2)
        _accumulate(x, np.einsum("ohpwq,copq->chw", g6, w.data, optimize=True))
        _accumulate(w, np.einsum("chw,ohpwq->copq", x.data, g6, optimize=True))
        if b is not None:
            _accumulate(b, g.sum(axis=(1, 2)))

    return _make(np.ascontiguousarray(out), parents, back)


# ---------------------------------------------------------------------------
# parameters & optimizer

class ParameterSet:
    """Named map of trainable tensors; iteration is lexicographic by name."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ContractError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._params):
            yield name, self._params[name]

    def subset(self, prefix: str) -> "ParameterSet":
        sub = ParameterSet()
        dotted = prefix if prefix.endswith(".") else prefix + "."
        for name, t in self.items():
            if name.startswith(dotted):
                sub._params[name] = t
        return sub

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.grad = None


def sgd_step(params: ParameterSet, learning_rate: float) -> ParameterSet:
    """p <- p - lr * grad(p) for every parameter, then clear all grads."""
    if not (math.isfinite(learning_rate) and learning_rate >= 0):
        raise ContractError(f"learning rate must be a finite non-negative real, got {learning_rate}")
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; run backward first")
    for _, p in params.items():
        p.data -= learning_rate * p.grad
        p.grad = None
    return params
