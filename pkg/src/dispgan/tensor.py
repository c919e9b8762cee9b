"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array plus an optional gradient buffer.
Operations build an implicit tape through parent links and backward
closures; :func:`backward` walks it once in reverse topological order,
accumulates gradients into the leaves and then dismantles the graph.

Float64 is the default dtype.  Shape errors name the operation and the
offending shapes.  Non-finite checking is cheap enough to leave on at
loss scalars only; :func:`set_debug_checks` turns it on for every op.
"""
from __future__ import annotations

import numpy as np

from . import kernels

_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_debug_checks(on: bool) -> None:
    """Check every op output (and every gradient) for non-finite values."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


class no_grad:
    """Context manager that disables tape construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class ShapeError(ValueError):
    """Incompatible operand shapes for an op."""


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or infinity."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic; all route through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in output")


def _make(out_data, parents, backward, op: str) -> Tensor:
    if _DEBUG_CHECKS:
        _check_finite(out_data, op)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / broadcasting ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}")

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * c)

    return _make(out_data, (a,), backward, "scale")


def add_const(a, c: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data + float(c)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad)

    return _make(out_data, (a,), backward, "add_const")


def pow_const(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out_data = a.data ** p

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward, "pow_const")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    return _make(out_data, (a, b), backward, "matmul")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    out_data = kernels.leaky_relu_fwd(a.data, slope)

    def backward(out):
        if a.requires_grad:
            a._accumulate(kernels.leaky_relu_bwd(a.data, out.grad, slope))

    return _make(out_data, (a,), backward, "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - out.data * out.data))

    return _make(out_data, (a,), backward, "tanh")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out_data = kernels.softplus_fwd(a.data)

    def backward(out):
        if a.requires_grad:
            a._accumulate(kernels.softplus_bwd(a.data, out.grad))

    return _make(out_data, (a,), backward, "softplus")


def hinge(a, sign: float) -> Tensor:
    """max(0, 1 + sign*a); sign=-1 for the real term, +1 for the fake term."""
    if sign not in (-1.0, 1.0, -1, 1):
        raise ValueError(f"hinge: sign must be +1 or -1, got {sign}")
    a = _as_tensor(a)
    sign = float(sign)
    out_data = kernels.hinge_fwd(a.data, sign)

    def backward(out):
        if a.requires_grad:
            a._accumulate(kernels.hinge_bwd(a.data, out.grad, sign))

    return _make(out_data, (a,), backward, "hinge")


def scale_shift(h, gamma, beta) -> Tensor:
    """Modulation h*(1+gamma)+beta; all three operands share a shape."""
    h, gamma, beta = _as_tensor(h), _as_tensor(gamma), _as_tensor(beta)
    if not (h.shape == gamma.shape == beta.shape):
        raise ShapeError(
            f"scale_shift: shapes must match, got {h.shape}, {gamma.shape}, {beta.shape}"
        )
    out_data = kernels.scale_shift_fwd(h.data, gamma.data, beta.data)

    def backward(out):
        dh, dg, db = kernels.scale_shift_bwd(h.data, gamma.data, out.grad)
        if h.requires_grad:
            h._accumulate(dh)
        if gamma.requires_grad:
            gamma._accumulate(dg)
        if beta.requires_grad:
            beta._accumulate(db)

    return _make(out_data, (h, gamma, beta), backward, "scale_shift")


def batch_standardize(a, eps: float = 1e-5):
    """Per-feature standardization over the batch (axis 0).

    Returns (out, batch_mean, batch_var); the two arrays are raw values for
    running-statistic updates and carry no gradient.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"batch_standardize: need a 2-D batch, got {a.shape}")
    out_data, mean, var, inv_std = kernels.batchnorm_fwd(a.data, eps)

    def backward(out):
        if a.requires_grad:
            a._accumulate(kernels.batchnorm_bwd(out.data, inv_std, out.grad))

    return _make(out_data, (a,), backward, "batch_standardize"), mean, var


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis)
    denom = a.data.size if axis is None else a.shape[axis]

    def backward(out):
        if a.requires_grad:
            g = out.grad / denom
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._accumulate(g)

    return _make(out_data, (a,), backward, "mean")


def asum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backward(out):
        if a.requires_grad:
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._accumulate(g)

    return _make(out_data, (a,), backward, "sum")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(out):
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)

    return _make(out_data, tuple(tensors), backward, "concat")


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: bad range [{start}:{stop}] for shape {a.shape}")
    out_data = a.data[start:stop].copy()

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[start:stop] = out.grad
            a._accumulate(g)

    return _make(out_data, (a,), backward, "slice_rows")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {a.shape}")
    out_data = a.data[:, start:stop].copy()

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a._accumulate(g)

    return _make(out_data, (a,), backward, "slice_cols")


def rowwise_inner(a, b) -> Tensor:
    """Per-row inner product of two (n, d) tensors, giving (n, 1)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeError(f"rowwise_inner: shapes {a.shape} and {b.shape}")
    out_data = np.einsum("ij,ij->i", a.data, b.data)[:, None]

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    return _make(out_data, (a, b), backward, "rowwise_inner")


def logsumexp(a, axis: int = 1) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)
    softmax = e / s

    def backward(out):
        if a.requires_grad:
            a._accumulate(np.expand_dims(out.grad, axis) * softmax)

    return _make(out_data, (a,), backward, "logsumexp")


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar root and dismantle the graph.

    Gradients accumulate additively into every reachable tensor with
    ``requires_grad``.  The graph is cleared afterwards, so a second call
    on the same root raises.
    """
    if root.data.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not np.all(np.isfinite(root.data)):
        raise NonFiniteError("backward: root is non-finite")

    # iterative reverse topological order; graphs are DAGs by construction
    order = []
    state = {}  # id -> 0 in progress, 1 done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 0
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if parent._backward is None:
                continue
            s = state.get(id(parent))
            if s == 0:
                raise AssertionError("backward: cycle in tape")
            if s is None:
                state[id(parent)] = 0
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 1
            order.append(node)

    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
            if _DEBUG_CHECKS:
                for p in node._parents:
                    if p.requires_grad and p.grad is not None:
                        _check_finite(p.grad, "backward")
    for node in order:
        node._parents = ()
        node._backward = None
