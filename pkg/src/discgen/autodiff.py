"""Reverse-mode automatic differentiation over dense numpy tensors.

A :class:`Tensor` wraps an ndarray and, when gradients are enabled, records
the operation and input tensors that produced it. :func:`backward` runs a
reverse topological sweep from a scalar root, accumulating gradients with
``+=`` across fan-out. Graphs are dynamic: every forward pass records a
fresh graph, and nothing is mutated after the forward value is cached.

Broadcasting in the elementwise ops is deliberately restricted to
scalar-vs-tensor and identical shapes; channel-wise bias and batch
normalization are dedicated primitives with hand-written adjoints instead.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .precision import default_dtype


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


_grad_enabled = True
_node_counter = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward passes produce leaf tensors."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A node in the computation graph: cached value plus backward recipe."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self.op = "leaf"
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._order = next(_node_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # Always copy: pass-through ops hand the same array to several
            # parents, and later += must not leak across nodes.
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # Operator sugar; scalars are python numbers, tensors must match shapes.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub_from(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named trainable tensor with a persistent gradient accumulator.

    A non-trainable parameter keeps its (zero) gradient buffer through any
    backward pass: blocked paths and frozen networks accumulate nothing.
    """

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype, name=name)
        self.op = "param"
        self.trainable = trainable
        self.requires_grad = trainable  # independent of any no_grad scope
        self.grad = np.zeros_like(self.data)

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = trainable
        self.requires_grad = trainable
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        self.grad += g


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        if p.grad is not None:
            p.grad.fill(0.0)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None] | None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._order = next(_node_counter)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_scalar(value) -> float | None:
    if isinstance(value, (int, float)):
        return float(value)
    return None


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# Elementwise operations


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        def bwd_scalar(g):
            if a.requires_grad:
                a.accumulate_grad(g)

        return _make(a.data + s, "add", (a,), bwd_scalar)
    _check_same_shape("add", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make(a.data + b.data, "add", (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        def bwd_scalar(g):
            if a.requires_grad:
                a.accumulate_grad(g)

        return _make(a.data - s, "sub", (a,), bwd_scalar)
    _check_same_shape("sub", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _make(a.data - b.data, "sub", (a, b), bwd)


def sub_from(a, b: Tensor) -> Tensor:
    """Scalar-minus-tensor (supports ``1.0 - t``)."""
    s = _as_scalar(a)
    if s is None:
        return sub(a, b)

    def bwd(g):
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _make(s - b.data, "sub", (b,), bwd)


def mul(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        def bwd_scalar(g):
            if a.requires_grad:
                a.accumulate_grad(g * s)

        return _make(a.data * s, "mul", (a,), bwd_scalar)
    _check_same_shape("mul", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _make(a.data * b.data, "mul", (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        inv = 1.0 / s

        def bwd_scalar(g):
            if a.requires_grad:
                a.accumulate_grad(g * inv)

        return _make(a.data * inv, "div", (a,), bwd_scalar)
    _check_same_shape("div", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g / b.data)
        if b.requires_grad:
            b.accumulate_grad(-g * a.data / (b.data * b.data))

    return _make(a.data / b.data, "div", (a, b), bwd)


def _unary(a: Tensor, op: str, value: np.ndarray, dlocal: Callable[[], np.ndarray]) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * dlocal())

    return _make(value, op, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    return _unary(a, "exp", value, lambda: value)


def log(a: Tensor) -> Tensor:
    return _unary(a, "log", np.log(a.data), lambda: 1.0 / a.data)


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)
    return _unary(a, "tanh", value, lambda: 1.0 - value * value)


def sigmoid(a: Tensor) -> Tensor:
    value = _sigmoid_array(a.data)
    return _unary(a, "sigmoid", value, lambda: value * (1.0 - value))


def relu(a: Tensor) -> Tensor:
    # Subgradient at 0 is the right-hand derivative: relu'(0) = 1.
    value = np.maximum(a.data, 0.0)
    return _unary(a, "relu", value, lambda: (a.data >= 0).astype(a.data.dtype))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    value = np.where(a.data >= 0, a.data, a.data * slope)
    return _unary(
        a, "leaky-relu", value,
        lambda: np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype),
    )


def square(a: Tensor) -> Tensor:
    return _unary(a, "square", a.data * a.data, lambda: 2.0 * a.data)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    value = np.clip(a.data, lo, hi)
    return _unary(
        a, "clamp", value,
        lambda: ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype),
    )


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "square": square,
}


def elementwise(tag: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise op by tag (binary takes a tensor or scalar b)."""
    if tag in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise {tag!r} needs a second operand")
        return _ELEMENTWISE_BINARY[tag](a, b)
    if tag in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise {tag!r} is unary")
        return _ELEMENTWISE_UNARY[tag](a)
    raise ValueError(f"unknown elementwise tag {tag!r}")


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Structural / linear-algebra operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: rank-2 operands required, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(a.data @ b.data, "matmul", (a, b), bwd)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1 of x."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"bias_add: bias {b.data.shape} does not match axis 1 of {x.data.shape}")
    bshape = (1, b.data.shape[0]) + (1,) * (x.data.ndim - 2)
    reduce_axes = tuple(i for i in range(x.data.ndim) if i != 1)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=reduce_axes))

    return _make(x.data + b.data.reshape(bshape), "bias_add", (x, b), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.data.shape

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(orig))

    return _make(x.data.reshape(shape), "reshape", (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum all elements to a scalar (shape ())."""

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape))

    return _make(np.sum(x.data).reshape(()), "sum", (x,), bwd)


def expand_batch(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading batch axis; gradient sums over it."""

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.sum(axis=0))

    data = np.broadcast_to(x.data, (n,) + x.data.shape).copy()
    return _make(data, "expand_batch", (x,), bwd)


def stop_gradient(x: Tensor) -> Tensor:
    """Graph marker that passes the value through and blocks the gradient."""
    out = _make(x.data, "stop_gradient", (), None)
    return out


def sigmoid_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sum over all elements of the stable binary cross-entropy with logits."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ShapeError(f"sigmoid_cross_entropy: targets {t.shape} vs logits {logits.data.shape}")
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bwd(g):
        if logits.requires_grad:
            logits.accumulate_grad(g * (_sigmoid_array(z) - t))

    return _make(np.sum(per).reshape(()), "bce_logits", (logits,), bwd)


# ---------------------------------------------------------------------------
# Convolution and batch normalization


def conv2d(x: Tensor, k: Tensor, stride: int, pad: int) -> Tensor:
    """Strided 2-d cross-correlation (no kernel flip) with zero padding."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: need [N,C,H,W] and [F,C,kh,kw], got {x.data.shape}, {k.data.shape}")
    n, c, h, w = x.data.shape
    f, kc, kh, kw = k.data.shape
    if kc != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {kc}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output extent {ho}x{wo}")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(kernels.conv2d_backward_input(g, k.data, stride, pad, h, w))
        if k.requires_grad:
            k.accumulate_grad(kernels.conv2d_backward_kernel(x.data, g, stride, pad, kh, kw))

    return _make(kernels.conv2d_forward(x.data, k.data, stride, pad), "conv2d", (x, k), bwd)


def conv2d_transpose(x: Tensor, k: Tensor, stride: int, pad: int) -> Tensor:
    """Fractionally strided convolution: the exact adjoint of conv2d.

    For every x, y: <conv2d(x, k), y> == <x, conv2d_transpose(y, k)> with
    identical stride/pad/kernel. The kernel keeps the conv2d layout
    [F,C,kh,kw]; the input carries F channels and the output C.
    """
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose: need [N,F,H,W] and [F,C,kh,kw], got {x.data.shape}, {k.data.shape}")
    n, f, h, w = x.data.shape
    kf, c, kh, kw = k.data.shape
    if kf != f:
        raise ShapeError(f"conv2d_transpose: input channels {f} != kernel dim 0 {kf}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d_transpose: non-positive output extent {ho}x{wo}")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(kernels.conv2d_forward(g, k.data, stride, pad))
        if k.requires_grad:
            k.accumulate_grad(kernels.conv2d_backward_kernel(g, x.data, stride, pad, kh, kw))

    return _make(
        kernels.conv2d_backward_input(x.data, k.data, stride, pad, ho, wo),
        "conv2d_transpose", (x, k), bwd,
    )


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over batch and spatial axes.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (the update is a side effect outside the graph);
    inference mode normalizes with the running buffers. Differentiable
    w.r.t. x, gamma, beta in both modes.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be train|infer, got {mode!r}")
    if x.data.ndim < 2:
        raise ShapeError(f"batch_norm: need at least [N,C], got {x.data.shape}")
    n = x.data.shape[0]
    channels = x.data.shape[1]
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise ShapeError(f"batch_norm: gamma/beta must be [{channels}]")
    axes = (0,) + tuple(range(2, x.data.ndim))
    m_count = x.data.size // channels
    cshape = (1, channels) + (1,) * (x.data.ndim - 2)

    if mode == "train":
        if n < 2 or m_count < 2:
            raise ShapeError(f"batch_norm: train mode needs batch >= 2, got batch {n}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(cshape)) * inv_std.reshape(cshape)
    out_data = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(cshape)
            if mode == "infer":
                x.accumulate_grad(dxhat * inv_std.reshape(cshape))
            else:
                # Standard fused train-mode adjoint; the sum of centered
                # values is identically zero so its term is dropped.
                sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = (dxhat - sum_dxhat / m_count - xhat * sum_dxhat_xhat / m_count) * inv_std.reshape(cshape)
                x.accumulate_grad(dx)

    return _make(out_data, "batch_norm", (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# Backward pass and verification


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Reverse sweep from a scalar root, accumulating gradients."""
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.data.shape}")
    order = _toposort(root)
    root.accumulate_grad(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def first_nonfinite(root: Tensor) -> Tensor | None:
    """Earliest-created node under root whose value is not finite."""
    bad = [n for n in _toposort(root) if not np.all(np.isfinite(n.data))]
    if not bad:
        return None
    return min(bad, key=lambda n: n._order)


def gradient_check(
    build: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    num_coords: int = 60,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``build`` must construct the scalar loss graph from the current values
    of ``params``. Checks a random subsample of at least 50 coordinates
    (all coordinates when there are fewer); relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8). Expects 64-bit precision
    for trustworthy differences.
    """
    rng = rng or np.random.default_rng(0)
    num_coords = max(num_coords, 50)
    zero_grad(params)
    loss = build()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    coords: list[tuple[int, int]] = []
    total = sum(p.data.size for p in params)
    if total <= num_coords:
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    else:
        picks = rng.choice(total, size=num_coords, replace=False)
        offsets = np.cumsum([0] + [p.data.size for p in params])
        for flat in sorted(picks):
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            coords.append((i, int(flat - offsets[i])))

    max_err = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        saved = flat[j]
        with no_grad():
            flat[j] = saved + h
            f_plus = float(build().data)
            flat[j] = saved - h
            f_minus = float(build().data)
        flat[j] = saved
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[i].reshape(-1)[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        max_err = max(max_err, err)
    return max_err
