"""Dense float64 tensors with taped reverse-mode differentiation.

The op set is deliberately small: add/sub/mul/div, matmul, transpose,
reshape, concat/split, sum/mean over axes, layer_norm, gelu, sigmoid,
softmax_with_bias and gather.  Convolutions are excluded on purpose;
patchify is a reshape plus a matmul.  Everything is float64 and every
recorded op has a hand-written backward rule.  Gradients accumulate in
reverse creation order, which makes backward passes bit-reproducible.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_ids = itertools.count()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Tensors produced by ops keep references to their parents and a closure
    that scatters the output gradient back to them.  ``_tid`` increases
    monotonically with creation, so sorting any reachable subgraph by it
    recovers a valid topological order (the tape).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_tid")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._tid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.isfinite(self.data).all():
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every overload routes through the module-level ops
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = parents
        out._backward = backward
        out.requires_grad = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g.shape != t.data.shape else g
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad = t.grad + g


class Tape:
    """Topologically ordered list of the ops reachable from a tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._tid)
        return cls(nodes)

    def __len__(self) -> int:
        return sum(1 for t in self.nodes if t._backward is not None)


def backward(loss: Tensor, params: dict[str, Tensor] | None = None):
    """Accumulate gradients of a scalar loss into every reachable leaf.

    Leaves with ``requires_grad`` get their ``.grad`` populated.  When
    ``params`` is given, returns ``{name: grad}`` for every entry, with
    zeros for parameters the loss does not depend on.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    loss.grad = np.ones_like(loss.data)
    for t in reversed(tape.nodes):
        if t._backward is None or t.grad is None:
            continue
        t._backward(t.grad)
        if not t.requires_grad:
            t.grad = None  # free interior activations as we go
    if params is None:
        return None
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    if not np.isfinite(out_data).all():
        raise FloatingPointError("non-finite result in div")

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def split(a: Tensor, sizes: list[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {a.shape[axis]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(int(lo), int(hi))
        idx = tuple(idx)

        def bwd(g, idx=idx):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            _accumulate(a, buf)

        outs.append(_make(np.ascontiguousarray(a.data[idx]), (a,), bwd))
    return outs


def gather(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, _axis_index(indices, axis, a.ndim), g)
        _accumulate(a, buf)

    return _make(np.take(a.data, indices, axis=axis), (a,), bwd)


def _axis_index(indices: np.ndarray, axis: int, ndim: int):
    idx = [slice(None)] * ndim
    idx[axis] = indices
    return tuple(idx)


# ---------------------------------------------------------------------------
# reductions

def sum_(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.ndim)
    out_data = a.data.sum(axis=axes_t, keepdims=keepdims)

    def bwd(g):
        _accumulate(a, _expand_reduced(g, a.shape, axes_t, keepdims))

    return _make(out_data, (a,), bwd)


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes_t])) if axes_t else a.size
    out_data = a.data.mean(axis=axes_t, keepdims=keepdims)

    def bwd(g):
        _accumulate(a, _expand_reduced(g, a.shape, axes_t, keepdims) / count)

    return _make(out_data, (a,), bwd)


def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def _expand_reduced(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


# ---------------------------------------------------------------------------
# neural nonlinearities

def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out_data = 0.5 * x * (1.0 + th)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        _accumulate(a, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner))

    return _make(out_data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift per channel."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        d = x.shape[-1]
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _accumulate(a, gx)
        red = tuple(range(g.ndim - 1))
        _accumulate(gain, _unbroadcast((g * xhat).sum(axis=red), gain.shape))
        _accumulate(bias, _unbroadcast(g.sum(axis=red), bias.shape))

    return _make(out_data, (a, gain, bias), bwd)


def attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None,
              want_probs: bool = False):
    """Fused scaled-dot-product attention: softmax(q @ k^T + bias) @ v.

    Callers fold the 1/sqrt(d) scale into ``q``.  One tape node instead of
    five keeps the quadratic score buffers off the tape; only the softmax
    probabilities are retained for the backward pass.  Returns
    ``(context, probs-or-None)`` with probs detached.
    """
    z = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    if bias is not None:
        if not np.isfinite(bias.data).all():
            raise FloatingPointError("non-finite attention bias")
        z += bias.data
    np.subtract(z, z.max(axis=-1, keepdims=True), out=z)
    np.exp(z, out=z)
    np.divide(z, z.sum(axis=-1, keepdims=True), out=z)
    probs = z
    out_data = np.matmul(probs, v.data)

    parents = (q, k, v) if bias is None else (q, k, v, bias)

    def bwd(g):
        _accumulate(v, _unbroadcast(np.matmul(np.swapaxes(probs, -1, -2), g), v.shape))
        gp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gp *= probs
        s = gp.sum(axis=-1, keepdims=True)
        gp -= probs * s  # gp is now the pre-softmax logit gradient
        _accumulate(q, _unbroadcast(np.matmul(gp, k.data), q.shape))
        _accumulate(k, _unbroadcast(np.matmul(np.swapaxes(gp, -1, -2), q.data), k.shape))
        if bias is not None:
            _accumulate(bias, _unbroadcast(gp, bias.shape))

    out = _make(out_data, parents, bwd)
    return out, (probs.copy() if want_probs else None)


def softmax_with_bias(logits: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-stochastic softmax of ``logits + bias`` over the last axis.

    ``bias=None`` is the plain-softmax path; a zero bias gives a bitwise
    identical result because exp() erases the sign of a zero sum.
    Differentiable through both arguments.
    """
    if bias is not None:
        if not np.isfinite(bias.data).all():
            raise FloatingPointError("non-finite attention bias")
        z = logits.data + bias.data
    else:
        z = logits.data.copy()
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite attention logits")
    np.subtract(z, z.max(axis=-1, keepdims=True), out=z)
    np.exp(z, out=z)
    np.divide(z, z.sum(axis=-1, keepdims=True), out=z)
    out_data = z

    parents = (logits,) if bias is None else (logits, bias)

    def bwd(g):
        gz = g * out_data
        gz -= out_data * gz.sum(axis=-1, keepdims=True)
        _accumulate(logits, _unbroadcast(gz, logits.shape))
        if bias is not None:
            _accumulate(bias, _unbroadcast(gz, bias.shape))

    return _make(out_data, parents, bwd)
