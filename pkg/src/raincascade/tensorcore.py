"""Dense 4-D tensors with reverse-mode automatic differentiation.

Only the handful of operations the deraining network needs are provided:
2-D convolution, ReLU, elementwise add/sub, channel concatenation, pixel
(un)shuffle and a mean-squared reduction. Every tensor is laid out as
``(N, C, H, W)``; a scalar is a ``(1, 1, 1, 1)`` tensor.
"""

from __future__ import annotations

import enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ContractViolation(ValueError):
    """Raised when an operation is called outside its preconditions."""


class Precision(enum.Enum):
    STANDARD = "standard"
    VERIFICATION = "verification"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.STANDARD else np.float64)


_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A 4-D array node in a computation graph.

    ``grad`` is only ever populated on tensors created with
    ``requires_grad=True`` directly (graph leaves); intermediate results
    carry lineage but never store gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ContractViolation(f"tensors are 4-D (N, C, H, W); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in out._parents)
        out._backward = backward if out.requires_grad else None
        out._op = op
        return out

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def precision(self) -> Precision:
        return Precision.STANDARD if self.data.dtype == np.float32 else Precision.VERIFICATION

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single-element tensor; got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractViolation(f"mixed precision in one graph: {sorted(str(d) for d in dtypes)}")


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# convolution

def _correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a padded (N, Cin, H, W) array with (Cout, Cin, kh, kw)."""
    kh, kw = k.shape[2], k.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, Cin, H', W', kh, kw
    out = np.tensordot(windows, k, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', Cout
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv2d_backward_input(grad_out: np.ndarray, kernel: np.ndarray, padding: int) -> np.ndarray:
    kh, kw = kernel.shape[2], kernel.shape[3]
    flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    g = np.pad(grad_out, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    full = _correlate(g, np.ascontiguousarray(flipped))  # gradient w.r.t. the padded input
    h = full.shape[2] - 2 * padding
    w = full.shape[3] - 2 * padding
    return np.ascontiguousarray(full[:, :, padding:padding + h, padding:padding + w])


def _conv2d_backward_kernel(x_padded: np.ndarray, grad_out: np.ndarray, kshape) -> np.ndarray:
    kh, kw = kshape[2], kshape[3]
    windows = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))  # N, Cin, H', W', kh, kw
    return np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))  # Cout, Cin, kh, kw


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 zero-padded cross-correlation plus per-channel bias."""
    _check_same_dtype(input, kernel, bias)
    n, cin, h, w = input.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ContractViolation(f"conv2d: kernel expects {kcin} input channels, input has {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d: kernel extents must be odd; got {kh}x{kw}")
    if padding < 0:
        raise ContractViolation(f"conv2d: padding must be >= 0; got {padding}")
    if bias.shape != (1, cout, 1, 1):
        raise ContractViolation(f"conv2d: bias must have shape (1, {cout}, 1, 1); got {bias.shape}")
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ContractViolation(f"conv2d: non-positive output extent {ho}x{wo}")

    xp = _pad(input.data, padding)
    out = _correlate(xp, kernel.data)
    out += bias.data

    def _backward(g):
        gi = _conv2d_backward_input(g, kernel.data, padding) if input.requires_grad else None
        gk = _conv2d_backward_kernel(xp, g, kernel.shape) if kernel.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1) if bias.requires_grad else None
        return gi, gk, gb

    return Tensor._from_op(out, (input, kernel, bias), _backward, "conv2d")


# ---------------------------------------------------------------------------
# elementwise

def relu(input: Tensor) -> Tensor:
    mask = input.data > 0
    out = np.where(mask, input.data, input.data.dtype.type(0))

    def _backward(g):
        return (np.where(mask, g, g.dtype.type(0)),)

    return Tensor._from_op(out, (input,), _backward, "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ContractViolation(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)

    def _backward(g):
        return g[:, :ca], g[:, ca:]

    return Tensor._from_op(out, (a, b), _backward, "concat_channels")


def slice_channels(input: Tensor, start: int, stop: int) -> Tensor:
    c = input.shape[1]
    if not 0 <= start <= stop <= c:
        raise ContractViolation(f"slice_channels: [{start}, {stop}) outside 0..{c}")
    out = np.ascontiguousarray(input.data[:, start:stop])

    def _backward(g):
        full = np.zeros_like(input.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor._from_op(out, (input,), _backward, "slice_channels")


# ---------------------------------------------------------------------------
# pixel (un)shuffle
#
# unshuffle: out[n, c*r*r + dy*r + dx, y, x] = in[n, c, y*r + dy, x*r + dx]

def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    v = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(v).reshape(n, c * r * r, h // r, w // r)


def _shuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    co = c // (r * r)
    v = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(v).reshape(n, co, h * r, w * r)


def pixel_unshuffle(input: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ContractViolation(f"pixel_unshuffle: factor must be >= 1; got {r}")
    _, _, h, w = input.shape
    if h % r or w % r:
        raise ContractViolation(f"pixel_unshuffle: extents {h}x{w} not divisible by {r}")
    return Tensor._from_op(_unshuffle(input.data, r), (input,), lambda g: (_shuffle(g, r),), "pixel_unshuffle")


def pixel_shuffle(input: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ContractViolation(f"pixel_shuffle: factor must be >= 1; got {r}")
    c = input.shape[1]
    if c % (r * r):
        raise ContractViolation(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    return Tensor._from_op(_shuffle(input.data, r), (input,), lambda g: (_unshuffle(g, r),), "pixel_shuffle")


# ---------------------------------------------------------------------------
# reductions

def mean_squared(a: Tensor, b: Tensor) -> Tensor:
    """Mean of ``(a - b)**2`` over every element, as a (1, 1, 1, 1) tensor."""
    _check_same_dtype(a, b)
    _check_same_shape(a, b, "mean_squared")
    if a.data.size == 0:
        raise ContractViolation("mean_squared: empty operands")
    diff = a.data - b.data
    count = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=a.dtype).reshape(1, 1, 1, 1)

    def _backward(g):
        scaled = diff * (g.reshape(()) * (2.0 / count)).astype(a.dtype)
        return scaled, -scaled

    return Tensor._from_op(out, (a, b), _backward, "mean_squared")


def tensor_sum(input: Tensor) -> Tensor:
    out = np.asarray(input.data.sum(), dtype=input.dtype).reshape(1, 1, 1, 1)
    return Tensor._from_op(out, (input,), lambda g: (np.broadcast_to(g.reshape(()), input.shape).copy(),), "sum")


# ---------------------------------------------------------------------------
# backpropagation

def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractViolation(f"backward: loss must be single-element; got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def finite_diff_grad(f: Callable[[Tensor], Tensor], at: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``at`` (64-bit only)."""
    if at.dtype != np.float64:
        raise ContractViolation("finite_diff_grad needs verification (64-bit) precision")
    if h <= 0:
        raise ContractViolation(f"finite_diff_grad: step must be positive; got {h}")
    base = at.data.copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        gflat[i] = _partial(f, base, i, h)
    return grad


def _partial(f: Callable[[Tensor], Tensor], base: np.ndarray, index: int, h: float) -> float:
    plus = base.copy()
    plus.reshape(-1)[index] += h
    minus = base.copy()
    minus.reshape(-1)[index] -= h
    return (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * h)


def finite_diff_partials(f: Callable[[Tensor], Tensor], at: Tensor, indices: Sequence[int], h: float = 1e-6) -> np.ndarray:
    """Central differences for a subset of flat coordinates of ``at``."""
    if at.dtype != np.float64:
        raise ContractViolation("finite_diff_partials needs verification (64-bit) precision")
    base = at.data.copy()
    return np.array([_partial(f, base, int(i), h) for i in indices])


def max_relative_error(analytic, numeric) -> float:
    a = np.abs(np.asarray(analytic, dtype=np.float64))
    n = np.abs(np.asarray(numeric, dtype=np.float64))
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(a, n), 1e-8)
    return float(np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)) / denom))
