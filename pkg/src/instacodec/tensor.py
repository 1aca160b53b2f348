"""Small deterministic reverse-mode autodiff over numpy arrays.

Only the operations the codec needs are provided. Every op builds a node that
holds a closure mapping the output gradient to one gradient per parent;
:func:`backward` walks the graph in a fixed topological order so repeated runs
produce bitwise-identical gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward_fn if needs else None
    return out


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Public hook for fused ops defined outside this module.

    ``backward_fn(grad)`` must return one array (or None) per parent.
    """
    return _node(np.asarray(data, order="C"), parents, backward_fn)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.data.dtype, copy=True) if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _binary_shapes(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _binary_shapes(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _binary_shapes(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def clamp_min(x: Tensor, lower: float) -> Tensor:
    """Floor at ``lower``; gradient flows only where the input was above it."""
    lower = x.dtype.type(lower)
    mask = x.data > lower
    return _node(np.maximum(x.data, lower), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))).astype(x.dtype)
    return _node(out, (x,), lambda g: (g * out * (1 - out),))


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero; exact in floating point."""
    ax = np.abs(x)
    whole = np.floor(ax)
    r = whole + (ax - whole >= 0.5)
    return np.copysign(r, x).astype(x.dtype) + 0  # "+ 0" turns -0.0 into 0.0


def ste_round(x: Tensor) -> Tensor:
    """Rounding forward, identity backward."""
    return _node(round_half_away(x.data), (x,), lambda g: (g,))


def uniform_noise(shape: tuple[int, ...], seed: int, stream: int = 0) -> np.ndarray:
    """U[-1/2, 1/2) samples from a counter-based Philox generator keyed by (seed, stream)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.random(int(np.prod(shape)), dtype=np.float64).reshape(shape) - 0.5


def add_uniform_noise(x: Tensor, rng_seed: int, stream: int = 0) -> Tensor:
    u = uniform_noise(x.shape, rng_seed, stream).astype(x.dtype)
    return _node(x.data + u, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# shape plumbing and reductions


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` along ``axis``."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(np.ascontiguousarray(x.data[index]), (x,), bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def tensor_sum(x: Tensor) -> Tensor:
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return _node(total, (x,), lambda g: (np.full_like(x.data, g),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    total = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.dtype)
    return _node(total, (x,), lambda g: (np.full_like(x.data, g / n),))


def sum_all(terms: Iterable[Tensor]) -> Tensor:
    """Left-fold addition of scalar tensors in the given order."""
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# ---------------------------------------------------------------------------
# convolution


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # n, c, oh, ow, k, k


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    k = w.shape[-1]
    win = _windows(x, k, stride, padding)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # n, oh, ow, co
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    win = _windows(x, k, stride, padding)
    oh, ow = g.shape[2], g.shape[3]
    win = win[:, :, :oh, :ow]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # co, ci, k, k


def _conv_input_grad(g: np.ndarray, w: np.ndarray, out_hw: tuple[int, int], stride: int, padding: int) -> np.ndarray:
    """Adjoint of ``_conv_forward`` with respect to its input (a.k.a. transposed convolution)."""
    n, _, oh, ow = g.shape
    _, ci, k, _ = w.shape
    # tap-major layout keeps every scattered slice contiguous
    cols = np.tensordot(w.transpose(2, 3, 1, 0), g, axes=([3], [1]))  # k, k, ci, n, oh, ow
    ph = max(out_hw[0] + 2 * padding, (oh - 1) * stride + k)
    pw = max(out_hw[1] + 2 * padding, (ow - 1) * stride + k)
    buf = np.zeros((ci, n, ph, pw), dtype=g.dtype)
    span_h = stride * (oh - 1) + 1
    span_w = stride * (ow - 1) + 1
    for ki in range(k):
        for kj in range(k):
            buf[:, :, ki : ki + span_h : stride, kj : kj + span_w : stride] += cols[ki, kj]
    out = buf[:, :, padding : padding + out_hw[0], padding : padding + out_hw[1]].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out)


def _check_stride(stride: int) -> None:
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; weight is (c_out, c_in, k, k)."""
    _check_stride(stride)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 (n, c, h, w), got shape {x.shape}")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be (c_out, c_in, k, k), got shape {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input channels (dim 1) = {x.shape[1]} but weight expects c_in = {weight.shape[1]}")
    k = weight.shape[2]
    h, w = x.shape[2], x.shape[3]
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: spatial size {h}x{w} with padding {padding} is smaller than kernel {k}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = _conv_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = _conv_input_grad(g, weight.data, (h, w), stride, padding) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, k, stride, padding) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; weight is (c_in, c_out, k, k).

    Output size is ``(h - 1) * stride - 2 * padding + k + output_padding``.
    """
    _check_stride(stride)
    if x.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d: input must be rank 4, got shape {x.shape}")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv_transpose2d: weight must be (c_in, c_out, k, k), got shape {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: input channels (dim 1) = {x.shape[1]} but weight expects c_in = {weight.shape[0]}"
        )
    if not 0 <= output_padding < stride or output_padding > 0 and stride == 1:
        raise ShapeError(f"conv_transpose2d: output_padding {output_padding} invalid for stride {stride}")
    k = weight.shape[2]
    h, w = x.shape[2], x.shape[3]
    oh = (h - 1) * stride - 2 * padding + k + output_padding
    ow = (w - 1) * stride - 2 * padding + k + output_padding
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv_transpose2d: non-positive output size {oh}x{ow}")
    out = _conv_input_grad(x.data, weight.data, (oh, ow), stride, padding)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"conv_transpose2d: bias must have shape ({weight.shape[1]},), got {bias.shape}")
        out += bias.data[None, :, None, None]

    def bw(g):
        # output_padding rows/cols beyond the last stride step receive no input contribution
        gx = _conv_forward(g, weight.data, stride, padding)[:, :, :h, :w] if x.requires_grad else None
        gw = _conv_weight_grad(g, x.data, k, stride, padding) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (np.ascontiguousarray(gx) if gx is not None else None), gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw)
