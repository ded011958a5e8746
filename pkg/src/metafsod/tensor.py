"""Dense float64 tensors with taped reverse-mode differentiation.

Every learnable computation in this package runs through the primitives
in this module.  Each executed primitive appends a record to an implicit
tape (records hang off their output tensors); ``backward`` gathers the
records reachable from a scalar loss, orders them by execution sequence,
and replays their adjoints in reverse.  Replaying the same tape twice
from zeroed gradients is bitwise reproducible.

Feature maps use index order [channel, row, column].
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ComputationTape",
    "ShapeError",
    "GraphError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "clamp",
    "minimum",
    "maximum",
    "softmax",
    "conv2d",
    "global_avg_pool",
    "max_pool2x2",
    "channel_scale",
    "concat",
    "stack_scalars",
    "reshape",
    "tsum",
    "tmean",
]


class ShapeError(ValueError):
    """Shapes inconsistent with the requested operation."""


class GraphError(RuntimeError):
    """backward() called on a tensor that cannot seed a tape replay."""


_SEQ = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Record:
    """One executed primitive: inputs and a closure producing their adjoints."""

    __slots__ = ("seq", "inputs", "grad_fn")

    def __init__(self, inputs, grad_fn):
        self.seq = next(_SEQ)
        self.inputs = inputs
        self.grad_fn = grad_fn


class Tensor:
    """Dense multi-dimensional array of float64 with optional gradient tracking.

    Invariants: ``data`` is C-contiguous float64, so the flat row-major
    buffer has exactly ``prod(shape)`` entries; ``grad``, when present,
    matches ``data``'s shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False):
        # asarray keeps 0-d scalars 0-d; order="C" enforces the row-major layout
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._record = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def is_leaf(self) -> bool:
        return self._record is None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"

    # arithmetic sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def as_tensor(x) -> Tensor:
    """Promote a number or array to a constant Tensor; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(inputs, data, grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = _Record(tuple(inputs), grad_fn)
    return out


class ComputationTape:
    """Ordered record of the primitives a root tensor depends on.

    Replaying adjoints in reverse execution order accumulates a gradient
    into every requires_grad leaf exactly once per replay.
    """

    def __init__(self, root: Tensor):
        if root._record is None:
            raise GraphError(
                "detached graph: tensor was not produced by taped operations"
            )
        entries = []
        seen = set()
        stack = [root]
        while stack:
            t = stack.pop()
            rec = t._record
            if rec is not None and id(rec) not in seen:
                seen.add(id(rec))
                entries.append((rec, t))
                stack.extend(rec.inputs)
        entries.sort(key=lambda e: e[0].seq)
        self._entries = entries
        self.root = root

    def __len__(self) -> int:
        return len(self._entries)

    def replay(self) -> None:
        """Accumulate adjoints into the .grad of every requires_grad leaf."""
        adjoint = {id(self.root): np.ones_like(self.root.data)}
        for rec, out in reversed(self._entries):
            g_out = adjoint.pop(id(out), None)
            if g_out is None:
                continue
            grads = rec.grad_fn(g_out)
            for inp, g in zip(rec.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp._record is None:
                    inp.grad = g if inp.grad is None else inp.grad + g
                else:
                    key = id(inp)
                    adjoint[key] = g if key not in adjoint else adjoint[key] + g


def backward(loss: Tensor) -> None:
    """Replay the tape below a scalar loss, filling leaf gradients.

    Gradients accumulate across calls; clear with ``zero_grad`` between
    optimizer steps.
    """
    if loss.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    ComputationTape(loss).replay()


# ---------------------------------------------------------------------------
# broadcasting helpers


def _contig(a: np.ndarray) -> np.ndarray:
    """Row-major view or copy; unlike ascontiguousarray it keeps 0-d arrays 0-d."""
    return np.asarray(a, order="C")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=axis, keepdims=True)
    return _contig(g)


def _binary(a, b, fwd, grad_a, grad_b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as err:
        raise ShapeError(
            f"operands with shapes {a.shape} and {b.shape} do not broadcast"
        ) from err

    def grad_fn(g):
        ga = _unbroadcast(grad_a(g, a.data, b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(grad_b(g, a.data, b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make((a, b), data, grad_fn)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def minimum(a, b) -> Tensor:
    # ties route the gradient to the first operand, keeping replays deterministic
    return _binary(
        a,
        b,
        np.minimum,
        lambda g, x, y: g * (x <= y),
        lambda g, x, y: g * (x > y),
    )


def maximum(a, b) -> Tensor:
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y: g * (x >= y),
        lambda g, x, y: g * (x < y),
    )


def _unary(x, data, dlocal) -> Tensor:
    return _make((x,), data, lambda g: (g * dlocal,))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make((x,), -x.data, lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary(x, y, y)


def log(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.log(x.data), 1.0 / x.data)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid_arr(x.data)
    return _unary(x, y, y * (1.0 - y))


def _sigmoid_arr(v: np.ndarray) -> np.ndarray:
    # evaluate on the sign-stable side to avoid overflow in exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def softplus(x) -> Tensor:
    """log(1 + e^x), overflow-free; the gradient is sigmoid(x)."""
    x = as_tensor(x)
    return _unary(x, np.logaddexp(0.0, x.data), _sigmoid_arr(x.data))


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return _unary(x, x.data * scale, scale)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient passes through the closed interval."""
    if not lo <= hi:
        raise ValueError(f"clamp bounds out of order: [{lo}, {hi}]")
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), inside.astype(np.float64))


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    data = x.data.reshape(shape)
    return _make((x,), data, lambda g: (_contig(g.reshape(old)),))


def getitem(x, idx) -> Tensor:
    """Basic or integer-array indexing with scatter-add backward."""
    x = as_tensor(x)
    data = x.data[idx]

    fancy = isinstance(idx, (list, np.ndarray)) or (
        isinstance(idx, tuple)
        and any(isinstance(i, (list, np.ndarray)) for i in idx)
    )

    def grad_fn(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _make((x,), data, grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an axis; backward splits the gradient."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty tensor list")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            _contig(np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis))
            for i in range(len(ts))
        )

    return _make(tuple(ts), data, grad_fn)


def stack_scalars(scalars) -> Tensor:
    """Stack scalar tensors into a length-n vector."""
    return concat([reshape(s, (1,)) for s in scalars], axis=0)


def tsum(x) -> Tensor:
    x = as_tensor(x)
    return _make((x,), np.asarray(x.data.sum()), lambda g: (np.full_like(x.data, g),))


def tmean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _make(
        (x,), np.asarray(x.data.mean()), lambda g: (np.full_like(x.data, g / n),)
    )


# ---------------------------------------------------------------------------
# neural-network primitives


def softmax(v) -> Tensor:
    """Probability vector over a 1-D input, computed with max-subtraction."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D tensor, got shape {v.shape}")
    if v.size == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def grad_fn(g):
        return (y * (g - np.dot(g, y)),)

    return _make((v,), y, grad_fn)


def global_avg_pool(x) -> Tensor:
    """Per-channel arithmetic mean over the spatial extent: [c,h,w] -> [c]."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [c,h,w], got shape {x.shape}")
    c, h, w = x.shape
    data = x.data.mean(axis=(1, 2))

    def grad_fn(g):
        return (np.broadcast_to(g[:, None, None] / (h * w), x.shape).copy(),)

    return _make((x,), data, grad_fn)


def channel_scale(x, v) -> Tensor:
    """Scale each channel of [c,h,w] by the matching entry of a length-c vector."""
    x = as_tensor(x)
    v = as_tensor(v)
    if x.ndim != 3 or v.ndim != 1 or x.shape[0] != v.shape[0]:
        raise ShapeError(
            f"channel_scale: feature channels {x.shape} vs vector {v.shape}"
        )
    data = x.data * v.data[:, None, None]

    def grad_fn(g):
        gx = g * v.data[:, None, None] if x.requires_grad else None
        gv = (g * x.data).sum(axis=(1, 2)) if v.requires_grad else None
        return gx, gv

    return _make((x, v), data, grad_fn)


def max_pool2x2(x) -> Tensor:
    """2x2/stride-2 max pooling; ties select the lowest flat index in the window."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"max_pool2x2 expects [c,h,w], got shape {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    windows = (
        x.data.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    arg = windows.argmax(axis=-1)  # first max wins: lowest flat window index
    data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        full = (
            gw.reshape(c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, h, w)
        )
        return (np.ascontiguousarray(full),)

    return _make((x,), data, grad_fn)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Extract k*k patches of a padded [c,h,w] array as [c*k*k, oh*ow]."""
    c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    hp, wp = x.shape[1], x.shape[2]
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, k, k, oh, ow),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * k * k, oh * ow), oh, ow


def conv2d(x, kernel, bias, stride: int = 1, pad: str = "same") -> Tensor:
    """2-D cross-correlation of [c_in,h,w] with [c_out,c_in,k,k] plus bias.

    ``pad="same"`` zero-pads so the output grid is h/stride (h must divide),
    ``pad="valid"`` uses no padding.  Differentiable w.r.t. input, kernel
    and bias.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    bias = as_tensor(bias)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [c,h,w], got shape {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(
            f"conv2d kernel must be [c_out,c_in,k,k], got shape {kernel.shape}"
        )
    c_in, h, w = x.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    k = kh
    if k % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {k}")
    if kc_in != c_in:
        raise ShapeError(
            f"conv2d kernel input channels ({kc_in}) != input channels ({c_in})"
        )
    if bias.shape != (c_out,):
        raise ShapeError(
            f"conv2d bias must have shape ({c_out},), got {bias.shape}"
        )
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"conv2d stride must be a positive integer, got {stride}")
    if pad == "same":
        if h % stride or w % stride:
            raise ShapeError(
                f"same-pad conv2d needs spatial dims divisible by stride, "
                f"got {h}x{w} with stride {stride}"
            )
        p = (k - 1) // 2
    elif pad == "valid":
        if h < k or w < k:
            raise ShapeError(
                f"valid-pad conv2d needs input at least {k}x{k}, got {h}x{w}"
            )
        p = 0
    else:
        raise ValueError(f"conv2d pad must be 'same' or 'valid', got {pad!r}")

    cols, oh, ow = _im2col(x.data, k, stride, p)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    data = (wmat @ cols + bias.data[:, None]).reshape(c_out, oh, ow)

    def grad_fn(g):
        gmat = g.reshape(c_out, oh * ow)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gmat).reshape(c_in, k, k, oh, ow)
            padded = np.zeros((c_in, h + 2 * p, w + 2 * p))
            for ki in range(k):
                for kj in range(k):
                    padded[
                        :,
                        ki : ki + stride * oh : stride,
                        kj : kj + stride * ow : stride,
                    ] += gcols[:, ki, kj]
            gx = padded[:, p : p + h, p : p + w] if p else padded
            gx = np.ascontiguousarray(gx)
        gk = (
            (gmat @ cols.T).reshape(c_out, c_in, k, k)
            if kernel.requires_grad
            else None
        )
        gb = gmat.sum(axis=1) if bias.requires_grad else None
        return gx, gk, gb

    return _make((x, kernel, bias), data, grad_fn)
