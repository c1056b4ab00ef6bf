"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs on the result node, so building an
expression eagerly *is* the forward pass and the implicit tape is acyclic by
construction (a node's inputs always precede it).  ``backward`` walks that
tape once in reverse topological order.

Engine contract, kept deliberately strict:

* all values are 64-bit floats (gradient checks and the CTC dynamic program
  need the headroom; speed is secondary at this scale);
* gradients accumulate across uses and across ``backward`` calls -- the
  caller zeroes them between optimization steps;
* no broadcasting except scalar-with-tensor; mixed shapes must go through
  explicit ``reshape``/``bias_add``, which removes a whole class of silent
  shape bugs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """An operation received tensors with incompatible shapes."""


class GraphError(RuntimeError):
    """The differentiation graph was used incorrectly (e.g. non-scalar loss)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``parents`` and ``_backward`` tie the tensor into the implicit tape;
    leaves have neither.  ``grad`` stays ``None`` until ``backward`` first
    touches the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars (python numbers) are treated as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not part of the op set; "
                             "divide by a python number instead")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(data, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor(data, parents=[p for p in parents if p.requires_grad], op=op)
    out.requires_grad = bool(out.parents)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _scalar_or_match(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ and "
                     "neither operand is a scalar")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undo the scalar broadcast: sum everything back into the scalar slot
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _scalar_or_match(a, b, "add")
    out = _node(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _accum(a, _reduce_to(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _reduce_to(g, b.data.shape))
        out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _scalar_or_match(a, b, "mul")
    out = _node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _accum(a, _reduce_to(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _reduce_to(g * a.data, b.data.shape))
        out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _node(a.data * c, (a,), "scale")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * c)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    out = _node(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        out._backward = bwd
    return out


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-column bias ``b`` of shape (D,) to every row of ``x`` (N, D).

    The one sanctioned non-scalar broadcast: it is explicit and shape-checked.
    """
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"bias_add: got x {x.data.shape}, b {b.data.shape}")
    out = _node(x.data + b.data[None, :], (x, b), "bias_add")
    if out.requires_grad:
        def bwd(g):
            if x.requires_grad:
                _accum(x, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))
        out._backward = bwd
    return out


def tsum(a: Tensor) -> Tensor:
    out = _node(np.sum(a.data).reshape(()), (a,), "sum")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, np.full_like(a.data, float(g)))
    return out


def mean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _node(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g.reshape(a.data.shape))
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    out = _node(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, np.transpose(g, inv))
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: empty input list")
    out = _node(np.concatenate([p.data for p in parts], axis=axis), parts, "concat")
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    _accum(p, g[tuple(idx)])
        out._backward = bwd
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.data.shape[axis]):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} "
                         f"of shape {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _node(a.data[idx].copy(), (a,), "slice")
    if out.requires_grad:
        def bwd(g):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            _accum(a, buf)
        out._backward = bwd
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d tensor; also serves as the embedding lookup."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-d tensor, got {a.data.shape}")
    out = _node(a.data[idx], (a,), "take_rows")
    if out.requires_grad:
        def bwd(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)
        out._backward = bwd
    return out


def pick_per_row(a: Tensor, indices) -> Tensor:
    """Select one column per row: (N, C) with indices (N,) -> (N, 1)."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError(f"pick_per_row: got tensor {a.data.shape}, indices {idx.shape}")
    rows = np.arange(a.data.shape[0])
    out = _node(a.data[rows, idx][:, None], (a,), "pick_per_row")
    if out.requires_grad:
        def bwd(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, (rows, idx), g[:, 0])
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        mask = a.data > 0
        out._backward = lambda g: _accum(a, g * mask)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _node(y, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * (1.0 - y * y))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _node(y, (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * y * (1.0 - y))
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _node(y, (a,), "softmax")
    if out.requires_grad:
        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accum(a, y * (g - dot))
        out._backward = bwd
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax along the last axis (rows log-sum-exp to zero)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = _node(y, (a,), "log_softmax")
    if out.requires_grad:
        def bwd(g):
            _accum(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))
        out._backward = bwd
    return out


def smooth_l1(a: Tensor) -> Tensor:
    """Elementwise smooth-L1: 0.5*x^2 inside |x|<1, |x|-0.5 outside."""
    x = a.data
    inside = np.abs(x) < 1.0
    y = np.where(inside, 0.5 * x * x, np.abs(x) - 0.5)
    out = _node(y, (a,), "smooth_l1")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * np.where(inside, x, np.sign(x)))
    return out


# ---------------------------------------------------------------------------
# convolution and pooling (NCHW)

def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    n, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int):
    n, c, h, w = shape
    x = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols[:, :, i, j]
    return x


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-d cross-correlation over NCHW input with per-filter bias.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, x {x.data.shape} vs w {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv2d: bias {b.data.shape} does not match Cout {w.data.shape[0]}")
    sh, sw = stride
    ph, pw = padding
    cout, cin, kh, kw = w.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: input {x.data.shape} smaller than kernel "
                         f"({kh}x{kw}) after padding {padding}")
    cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    y = np.matmul(wmat[None], cols) + b.data[None, :, None]
    n = x.data.shape[0]
    out = _node(y.reshape(n, cout, ho, wo), (x, w, b), "conv2d")
    if out.requires_grad:
        padded_shape = xp.shape

        def bwd(g):
            gm = g.reshape(n, cout, ho * wo)
            if w.requires_grad:
                gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
                _accum(w, gw.reshape(w.data.shape))
            if b.requires_grad:
                _accum(b, gm.sum(axis=(0, 2)))
            if x.requires_grad:
                gcols = np.matmul(wmat.T[None], gm)
                gx = _col2im(gcols, padded_shape, kh, kw, sh, sw, ho, wo)
                if ph or pw:
                    gx = gx[:, :, ph:ph + x.data.shape[2], pw:pw + x.data.shape[3]]
                _accum(x, gx)
        out._backward = bwd
    return out


def maxpool2d(x: Tensor, kernel=(2, 2), stride=None) -> Tensor:
    """Max pooling over NCHW input; trailing rows/cols that do not fill a
    window are dropped (floor semantics)."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: need 4-d input, got {x.data.shape}")
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    n, c, h, w = x.data.shape
    if h < kh or w < kw:
        raise ShapeError(f"maxpool2d: input {x.data.shape} smaller than window {kernel}")
    flat = x.data.reshape(n * c, 1, h, w)
    cols, ho, wo = _im2col(flat, kh, kw, sh, sw)  # (n*c, kh*kw, ho*wo)
    arg = cols.argmax(axis=1)
    y = np.take_along_axis(cols, arg[:, None, :], axis=1)[:, 0, :]
    out = _node(y.reshape(n, c, ho, wo), (x,), "maxpool2d")
    if out.requires_grad:
        def bwd(g):
            gcols = np.zeros_like(cols)
            np.put_along_axis(gcols, arg[:, None, :], g.reshape(n * c, 1, ho * wo), axis=1)
            gx = _col2im(gcols, (n * c, 1, h, w), kh, kw, sh, sw, ho, wo)
            _accum(x, gx.reshape(x.data.shape))
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# backward pass and friends

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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor that requires gradients.

    The loss must be scalar.  Gradients add into existing buffers, so
    fan-out sums path gradients and repeated calls accumulate.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not depend on any differentiable tensor")
    order = _topo_order(loss)
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Sequence[Tensor], learning_rate: float) -> None:
    """Plain gradient descent: p <- p - lr * grad, then zero the grads."""
    for p in params:
        if p.grad is not None:
            p.data -= learning_rate * p.grad
            p.grad = None


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the (scalar-valued) expression from ``params`` on
    every call.  Returns the max over all parameter entries of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    zero_grads(params)
    out = fn()
    if out.data.size != 1:
        raise GraphError(f"grad_check: fn must be scalar-valued, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: non-finite function value")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = fn().item()
            flat[i] = orig - epsilon
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            if not (math.isfinite(numeric) and math.isfinite(gflat[i])):
                raise NumericError("grad_check: non-finite gradient entry")
            worst = max(worst, abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric)))
    zero_grads(params)
    return worst
