"""Minimal float64 tensor with taped reverse-mode differentiation.

Every primitive below computes its forward value with numpy and, when any
input takes part in differentiation, records a closure that maps the output
adjoint to input adjoints.  ``Tensor.backward`` replays those closures in
reverse topological order.

Feature maps are rank-4 ``(n, c, h, w)``.  Parameters may have lower rank
(biases are vectors, fully connected weights are matrices) and losses are
rank-0 scalars.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, finite differences)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            _raise_not_scalar(self)
        order = _topological_order(self)
        adjoints = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"expected a scalar tensor, got extents {t.shape}")


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen and _tracks(p):
                stack.append((p, False))
    return order


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a primitive; attach ``backward`` if needed.

    ``backward(g)`` must return one adjoint (or ``None``) per parent.
    """
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_rank4(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected rank-4 (n, c, h, w) input, got extents {x.shape}")


# ----------------------------------------------------------------------------
# convolution and affine maps
# ----------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    _check_rank4(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (c_out, c_in, kh, kw), got {weight.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: need stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ShapeError(f"conv2d: channel axis (1) of input has extent {c}, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias must have extent ({c_out},), got {bias.shape}")
    oh, ow = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: spatial axes (2, 3) extents {h}x{w} too small for kernel {kh}x{kw}")

    W = weight.data
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return _conv1x1(x, weight, bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5))  # (n, oh, ow, c, kh, kw)
    flat = cols.reshape(n * oh * ow, c * kh * kw)
    out = flat @ W.reshape(c_out, -1).T
    out = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, c_out)
        gw = (g2.T @ flat).reshape(W.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gx = None
        if _tracks(x):
            dcols = (g2 @ W.reshape(c_out, -1)).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, backward, "conv2d")


def _conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    n, c, h, w = x.shape
    c_out = weight.shape[0]
    W = weight.data.reshape(c_out, c)
    xf = x.data.reshape(n, c, h * w)
    out = np.matmul(W, xf)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gf = g.reshape(n, c_out, h * w)
        gw = np.tensordot(gf, xf, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gb = gf.sum(axis=(0, 2)) if bias is not None else None
        gx = np.matmul(W.T, gf).reshape(x.shape) if _tracks(x) else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out.reshape(n, c_out, h, w), parents, backward, "conv2d")


def fully_connected(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on per-sample channel vectors stored as ``(n, C, 1, 1)``."""
    _check_rank4(x, "fully_connected")
    n, c = x.shape[:2]
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"fully_connected: spatial axes must be 1x1, got {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != c:
        raise ShapeError(f"fully_connected: input length {c} does not match weight {weight.shape}")
    c_out = weight.shape[0]
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"fully_connected: bias must have length {c_out}, got {bias.shape}")
    xv = x.data.reshape(n, c)
    out = xv @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gv = g.reshape(n, c_out)
        return (
            (gv @ weight.data).reshape(x.shape),
            gv.T @ xv,
            gv.sum(axis=0) if bias is not None else None,
        )

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out.reshape(n, c_out, 1, 1), parents, backward, "fully_connected")


# ----------------------------------------------------------------------------
# activations and pooling
# ----------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


# float64 rounds sigmoid to exactly 0 or 1 for |x| beyond ~37; keep it inside (0, 1).
_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    s = np.clip(expit(x.data), _SIGMOID_LO, _SIGMOID_HI)
    return record(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_rank4(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h * w == 0:
        raise ShapeError(f"global_avg_pool: empty spatial extent {h}x{w}")
    area = h * w
    out = x.data.sum(axis=(2, 3), keepdims=True) / area

    def backward(g):
        return (np.broadcast_to(g / area, x.shape).copy(),)

    return record(out, (x,), backward, "global_avg_pool")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _check_rank4(x, "upsample_nearest")
    if factor < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, factor, w, factor))
    out = out.reshape(n, c, h * factor, w * factor)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record(out, (x,), backward, "upsample_nearest")


def _window_sum(a: np.ndarray, factor: int) -> np.ndarray:
    # Pairwise halving keeps sums of equal values exact for power-of-two factors.
    if factor & (factor - 1) == 0:
        while factor > 1:
            a = a[:, :, 0::2, :] + a[:, :, 1::2, :]
            a = a[:, :, :, 0::2] + a[:, :, :, 1::2]
            factor //= 2
        return a
    n, c, h, w = a.shape
    return a.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def downsample_avg(x: Tensor, factor: int) -> Tensor:
    _check_rank4(x, "downsample_avg")
    if factor < 1:
        raise ShapeError(f"downsample_avg: factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"downsample_avg: spatial extents {h}x{w} not divisible by {factor}")
    scale = 1.0 / (factor * factor)
    out = _window_sum(x.data, factor) * scale

    def backward(g):
        up = np.broadcast_to((g * scale)[:, :, :, None, :, None], (n, c, h // factor, factor, w // factor, factor))
        return (up.reshape(x.shape),)

    return record(out, (x,), backward, "downsample_avg")


# ----------------------------------------------------------------------------
# channel routing
# ----------------------------------------------------------------------------

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels: need at least one tensor")
    for t in xs:
        _check_rank4(t, "concat_channels")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: batch/spatial extents {t.shape[0]}x{t.shape[2]}x{t.shape[3]} "
                f"differ from {n}x{h}x{w}"
            )
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[1] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record(np.concatenate([t.data for t in xs], axis=1), tuple(xs), backward, "concat_channels")


def split_channels(x: Tensor, sizes: Sequence[int]) -> list:
    _check_rank4(x, "split_channels")
    if sum(sizes) != x.shape[1] or any(s < 1 for s in sizes):
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not partition channel extent {x.shape[1]}")
    outs, start = [], 0
    for s in sizes:
        lo, hi = start, start + s

        def backward(g, lo=lo, hi=hi):
            full = np.zeros(x.shape)
            full[:, lo:hi] = g
            return (full,)

        outs.append(record(x.data[:, lo:hi].copy(), (x,), backward, "split_channels"))
        start = hi
    return outs


def permute_channels(x: Tensor, perm: np.ndarray) -> Tensor:
    """Output channel ``p`` is input channel ``perm[p]``."""
    _check_rank4(x, "permute_channels")
    perm = np.asarray(perm)
    if perm.shape != (x.shape[1],):
        raise ShapeError(f"permute_channels: permutation length {perm.shape} vs channel extent {x.shape[1]}")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return record(x.data[:, perm], (x,), lambda g: (g[:, inverse],), "permute_channels")


# ----------------------------------------------------------------------------
# elementwise arithmetic with the two attention broadcast patterns
# ----------------------------------------------------------------------------

def _broadcast_axes(a: Tensor, b: Tensor, op: str) -> tuple:
    if a.shape == b.shape:
        return ()
    if a.ndim == 4 and b.ndim == 4 and b.shape[0] == a.shape[0]:
        n, c, h, w = a.shape
        if b.shape == (n, c, 1, 1):
            return (2, 3)
        if b.shape == (n, 1, h, w):
            return (1,)
    raise ShapeError(f"{op}: cannot broadcast {b.shape} against {a.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    axes = _broadcast_axes(a, b, "add")

    def backward(g):
        return g, (g.sum(axis=axes, keepdims=True) if axes else g)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    axes = _broadcast_axes(a, b, "sub")

    def backward(g):
        return g, -(g.sum(axis=axes, keepdims=True) if axes else g)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    axes = _broadcast_axes(a, b, "mul")

    def backward(g):
        gb = g * a.data
        return g * b.data, (gb.sum(axis=axes, keepdims=True) if axes else gb)

    return record(a.data * b.data, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    return record(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def flip_width(x: Tensor) -> Tensor:
    _check_rank4(x, "flip_width")
    return record(x.data[:, :, :, ::-1].copy(), (x,), lambda g: (g[:, :, :, ::-1],), "flip_width")


# ----------------------------------------------------------------------------
# reductions to scalars
# ----------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, g.item()),), "sum")


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(x * weights)`` for a constant weight array of the same shape."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs tensor {x.shape}")
    return record(np.asarray((x.data * weights).sum()), (x,), lambda g: (g * weights,), "weighted_sum")
