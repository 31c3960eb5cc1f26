"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a vector-Jacobian closure; calling
``backward`` on a scalar walks the graph once in reverse topological order
and adds this call's adjoints into each tensor's ``grad`` buffer, so repeated
backward calls accumulate.  The op set is deliberately small: exactly what a
convolutional encoder/decoder plus a gated recurrent cell need.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import NanGradientError, ShapeMismatchError

_node_ids = itertools.count()
_grad_enabled = True
_allocator_tuned = False


def tune_allocator() -> bool:
    """Raise glibc's mmap/trim thresholds so graph-sized arrays reuse heap
    pages instead of faulting fresh ones; a several-fold speedup for
    training-sized workloads.  Process-global, idempotent, no-op off glibc.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        m_mmap_threshold, m_trim_threshold = -3, -1
        libc.mallopt(m_mmap_threshold, 512 * 1024 * 1024)
        libc.mallopt(m_trim_threshold, 512 * 1024 * 1024)
        _allocator_tuned = True
    except OSError:
        return False
    return True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (values are unchanged)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-dimensional float64 array plus its accumulated gradient."""

    __slots__ = ("values", "grad", "node_id", "_parents", "_vjp")

    def __init__(self, values, parents=(), vjp=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.node_id = next(_node_ids)
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"

    # Convenience arithmetic; model code uses the explicit functions below.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, affine(other, -1.0, 0.0))
        return affine(self, 1.0, -float(other))

    def __neg__(self):
        return affine(self, -1.0, 0.0)


def _make(values, parents, vjp):
    if _grad_enabled:
        return Tensor(values, parents=parents, vjp=vjp)
    return Tensor(values)


def _mm_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Single shared GEMM form, a @ b.T with both operands C-contiguous.
    # Both the per-cell recurrent maps and the convolution anchor tap route
    # through here, so a center-tap-only convolution reproduces the
    # matrix path bit for bit (all other taps then add exact zeros).
    return np.matmul(a, b.T)


def _window_cols(field, u, v0, height, width, m, channels):
    # Rows of sliding windows: cols[i*width+j, dv*channels+c] equals
    # field[u+i, v0+j+dv, c] for dv in range(m).
    base = field[u : u + height, v0:, :]
    s0, s1, s2 = base.strides
    view = np.lib.stride_tricks.as_strided(
        base, shape=(height, width, m, channels), strides=(s0, s1, s1, s2)
    )
    return np.ascontiguousarray(view).reshape(height * width, m * channels)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss."""
    if loss.values.shape != ():
        raise ShapeMismatchError(
            f"backward requires a scalar, got shape {loss.values.shape}"
        )
    # Iterative post-order DFS; unrolled recurrences can exceed the
    # interpreter's recursion limit.
    order = []
    visited = {loss.node_id}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        for parent in parents:
            if parent.node_id not in visited:
                visited.add(parent.node_id)
                stack.append((parent, iter(parent._parents)))
                break
        else:
            order.append(node)
            stack.pop()

    # Adjoint arrays are never mutated in place (accumulation allocates), so
    # they can be handed to ``grad`` without copying.
    adjoints = {loss.node_id: np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = adjoints.pop(node.node_id)
        node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            seen = adjoints.get(parent.node_id)
            adjoints[parent.node_id] = pg if seen is None else seen + pg


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _make(a.values + b.values, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return _make(a.values * b.values, (a, b), lambda g: (g * b.values, g * a.values))


def affine(a: Tensor, scale: float, shift: float) -> Tensor:
    """Elementwise ``scale * a + shift`` with constant scalars."""
    return _make(scale * a.values + shift, (a,), lambda g: (scale * g,))


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-d operands")
    if transpose_b:
        if a.shape[1] != b.shape[1]:
            raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}.T")
        out = _mm_nt(a.values, b.values)
        vjp = lambda g: (np.matmul(g, b.values), np.matmul(g.T, a.values))
    else:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
        out = np.matmul(a.values, b.values)
        vjp = lambda g: (np.matmul(g, b.values.T), np.matmul(a.values.T, g))
    return _make(out, (a, b), vjp)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-N vector to every row of an M×N matrix."""
    if a.values.ndim != 2 or v.values.shape != (a.shape[1],):
        raise ShapeMismatchError(f"add_rowvec: {a.shape} + {v.shape}")
    return _make(a.values + v.values, (a, v), lambda g: (g, g.sum(axis=0)))


def add_chanvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-C vector to every cell of a C×H×W field, per channel."""
    if a.values.ndim != 3 or v.values.shape != (a.shape[0],):
        raise ShapeMismatchError(f"add_chanvec: {a.shape} + {v.shape}")
    out = a.values + v.values[:, None, None]
    return _make(out, (a, v), lambda g: (g, g.sum(axis=(1, 2))))


def sigmoid(x: Tensor) -> Tensor:
    # exp may overflow for very negative inputs; 1/(1+inf) is the right 0.0.
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.values))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax across the channel axis of a 2×H×W field, per spatial cell."""
    if x.values.ndim != 3 or x.shape[0] != 2:
        raise ShapeMismatchError(
            f"softmax_channels expects a 2-channel field, got shape {x.shape}"
        )
    shifted = x.values - x.values.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=0, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=0, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), vjp)


BCE_EPS = 1e-7


def bce_loss(p: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross entropy of probabilities ``p`` against 0/1 targets.

    Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS]; the clamp is flat,
    so no gradient flows where it is active.
    """
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatchError(f"bce_loss: prediction {p.shape} vs target {y.shape}")
    pv = p.values
    pc = np.clip(pv, BCE_EPS, 1.0 - BCE_EPS)
    per_cell = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    out = np.asarray(per_cell.mean())
    n = y.size

    def vjp(g):
        inside = (pv >= BCE_EPS) & (pv <= 1.0 - BCE_EPS)
        gp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n
        return (g * np.where(inside, gp, 0.0),)

    return _make(out, (p,), vjp)


def sum_all(x: Tensor) -> Tensor:
    return _make(np.asarray(x.values.sum()), (x,), lambda g: (g * np.ones_like(x.values),))


def mean_all(x: Tensor) -> Tensor:
    n = x.values.size
    return _make(np.asarray(x.values.mean()), (x,), lambda g: (g * np.full_like(x.values, 1.0 / n),))


def stack_channels(planes) -> Tensor:
    """Stack H×W tensors into a C×H×W field."""
    planes = list(planes)
    if not planes:
        raise ShapeMismatchError("stack_channels needs at least one plane")
    for t in planes[1:]:
        _require_same_shape(planes[0], t, "stack_channels")
    out = np.stack([t.values for t in planes], axis=0)
    return _make(out, tuple(planes), lambda g: tuple(g[c] for c in range(len(planes))))


def take_channel(x: Tensor, channel: int) -> Tensor:
    if x.values.ndim != 3 or not 0 <= channel < x.shape[0]:
        raise ShapeMismatchError(f"take_channel({channel}) on shape {x.shape}")

    def vjp(g):
        gx = np.zeros_like(x.values)
        gx[channel] = g
        return (gx,)

    return _make(x.values[channel].copy(), (x,), vjp)


def channels_to_rows(x: Tensor) -> Tensor:
    """Reindex a C×H×W field as an (H·W)×C matrix (one row per grid cell)."""
    if x.values.ndim != 3:
        raise ShapeMismatchError(f"channels_to_rows on shape {x.shape}")
    c, h, w = x.shape
    out = np.ascontiguousarray(np.moveaxis(x.values, 0, 2).reshape(h * w, c))
    return _make(out, (x,), lambda g: (np.moveaxis(g.reshape(h, w, c), 2, 0),))


def rows_to_channels(x: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`channels_to_rows`."""
    if x.values.ndim != 2 or x.shape[0] != height * width:
        raise ShapeMismatchError(
            f"rows_to_channels: {x.shape} does not hold {height}x{width} cells"
        )
    c = x.shape[1]
    out = np.ascontiguousarray(np.moveaxis(x.values.reshape(height, width, c), 2, 0))
    return _make(
        out, (x,), lambda g: (np.moveaxis(g, 0, 2).reshape(height * width, c),)
    )


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2-d correlation: C_in×H×W with an O×C_in×K×K kernel.

    out[o,i,j] = bias[o] + sum_{c,u,v} kernel[o,c,u,v] * padded[c,i+u,j+v],
    zero-padded by floor((K-1)/2) on top/left and ceil((K-1)/2) on
    bottom/right so the spatial extent is preserved for any K >= 1.
    """
    if x.values.ndim != 3:
        raise ShapeMismatchError(f"conv2d input must be C×H×W, got {x.shape}")
    if kernel.values.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeMismatchError(f"conv2d kernel must be O×C×K×K, got {kernel.shape}")
    c_in, height, width = x.shape
    c_out, c_k, k, _ = kernel.shape
    if c_k != c_in:
        raise ShapeMismatchError(
            f"conv2d: input has {c_in} channels but kernel expects {c_k}"
        )
    if min(x.shape) == 0 or min(kernel.shape) == 0:
        raise ShapeMismatchError("conv2d: zero-sized dimension")
    if bias is not None and bias.values.shape != (c_out,):
        raise ShapeMismatchError(f"conv2d bias must have shape ({c_out},)")

    pad = (k - 1) // 2  # top/left; bottom/right gets the remainder
    padded = np.zeros((height + k - 1, width + k - 1, c_in), dtype=np.float64)
    padded[pad : pad + height, pad : pad + width, :] = np.moveaxis(x.values, 0, 2)
    n_cells = height * width
    kv = kernel.values

    # The tap at (pad, pad) runs as its own (cells×C)@(C×O) GEMM, the same
    # call the per-cell matrix path makes, so a kernel that is zero off that
    # tap reproduces the matrix path bit for bit (the fused remainder GEMMs
    # then contribute exact zeros).  Remaining taps are fused per row offset.
    anchor = padded[pad : pad + height, pad : pad + width, :].reshape(n_cells, c_in)
    rows = _mm_nt(anchor, np.ascontiguousarray(kv[:, :, pad, pad]))
    for u in range(k):
        segments = ((0, pad), (pad + 1, k)) if u == pad else ((0, k),)
        for v0, v1 in segments:
            m = v1 - v0
            if m <= 0:
                continue
            cols = _window_cols(padded, u, v0, height, width, m, c_in)
            wseg = np.ascontiguousarray(
                kv[:, :, u, v0:v1].transpose(0, 2, 1).reshape(c_out, m * c_in)
            )
            rows += _mm_nt(cols, wseg)
    if bias is not None:
        rows = rows + bias.values
    out = np.ascontiguousarray(np.moveaxis(rows.reshape(height, width, c_out), 2, 0))

    def vjp(g):
        g_rows = np.ascontiguousarray(np.moveaxis(g, 0, 2).reshape(n_cells, c_out))
        # Kernel gradient, fused per row offset of the saved padded input.
        g_kernel = np.empty_like(kv)
        for u in range(k):
            cols = _window_cols(padded, u, 0, height, width, k, c_in)
            g_kernel[:, :, u, :] = (
                np.matmul(g_rows.T, cols).reshape(c_out, k, c_in).transpose(0, 2, 1)
            )
        # Input gradient as the transposed convolution, gather-style: pad the
        # output adjoint by the mirrored margins and correlate with the
        # kernel reversed in both spatial axes.
        g_pad = np.zeros((height + k - 1, width + k - 1, c_out), dtype=np.float64)
        rev = k - 1 - pad
        g_pad[rev : rev + height, rev : rev + width, :] = g_rows.reshape(
            height, width, c_out
        )
        g_xrows = np.zeros((n_cells, c_in), dtype=np.float64)
        for s in range(k):
            cols = _window_cols(g_pad, s, 0, height, width, k, c_out)
            wback = np.ascontiguousarray(
                kv[:, :, k - 1 - s, ::-1].transpose(1, 2, 0).reshape(c_in, k * c_out)
            )
            g_xrows += _mm_nt(cols, wback)
        g_x = np.moveaxis(g_xrows.reshape(height, width, c_in), 2, 0).copy()
        if bias is None:
            return (g_x, g_kernel)
        return (g_x, g_kernel, g_rows.sum(axis=0))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, vjp)


@dataclass
class RmsPropState:
    """Running mean of squared gradients, one buffer per parameter."""

    mean_square: list
    decay: float = 0.9
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, decay: float = 0.9, eps: float = 1e-8) -> "RmsPropState":
        if not 0.0 < decay < 1.0:
            raise ShapeMismatchError(f"rmsprop decay must be in (0,1), got {decay}")
        return cls([np.zeros_like(p.values) for p in params], decay, eps)


def rmsprop_step(params, state: RmsPropState, lr: float) -> None:
    """In-place RMSprop update from each parameter's accumulated gradient."""
    if lr <= 0:
        raise ShapeMismatchError(f"learning rate must be positive, got {lr}")
    if len(state.mean_square) != len(params):
        raise ShapeMismatchError("optimizer state does not mirror the parameter set")
    grads = []
    for p, s in zip(params, state.mean_square):
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if g.shape != p.values.shape or s.shape != p.values.shape:
            raise ShapeMismatchError("optimizer state/gradient shape mismatch")
        if not np.isfinite(g).all():
            raise NanGradientError("non-finite gradient; step aborted")
        grads.append(g)
    for p, s, g in zip(params, state.mean_square, grads):
        s *= state.decay
        s += (1.0 - state.decay) * g * g
        p.values -= lr * g / (np.sqrt(s) + state.eps)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
