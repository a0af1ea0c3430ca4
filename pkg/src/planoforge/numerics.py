"""Small dense tensors with reverse-mode automatic differentiation.

Everything is float64 and row-major.  A :class:`Tensor` remembers the op that
produced it and its parents, so :func:`backward` can walk the recorded graph
in reverse topological order.  Broadcasting is deliberately absent: binary
elementwise ops need identical shapes (Python scalars are the one exception)
and :func:`add_bias` is the only op that expands an operand.
"""

from __future__ import annotations

import contextlib
import os
from collections.abc import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "constant",
    "no_grad",
    "debug_mode",
    "forward_op",
    "backward",
    "topological_order",
    "grad_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "square",
    "absolute",
    "relu",
    "silu",
    "sigmoid",
    "tanh",
    "clip",
    "maximum",
    "minimum",
    "interp",
    "matmul",
    "conv2d",
    "add_bias",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reduce_min",
    "concat",
    "slice_",
    "reshape",
    "transpose",
    "softmax",
    "upsample_nearest",
]


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested op."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


_GRAD_ENABLED = True
_DEBUG = bool(os.environ.get("PLANOFORGE_DEBUG"))


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, sampling)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for non-finite values inside the block."""
    global _DEBUG
    prev = _DEBUG
    _DEBUG = enabled
    try:
        yield
    finally:
        _DEBUG = prev


def _frozen(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable float64 array plus the graph record needed for backprop."""

    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to our reflected ops

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        *,
        _parents: tuple[Tensor, ...] = (),
        _backward: Callable[[np.ndarray], tuple] | None = None,
        op: str = "leaf",
        _check: bool = True,
    ):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        if _check and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or op!r}")
        self.data = _frozen(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Create a leaf tensor; rejects NaN/Inf."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(kind: str, out: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    record = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if _DEBUG and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind} produced a non-finite value")
    t = Tensor.__new__(Tensor)
    t.data = _frozen(out)
    t.requires_grad = record
    t.name = None
    t.op = kind
    t._parents = parents if record else ()
    t._backward = backward_fn if record else None
    return t


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        return _result("add", a.data + b, (a,), lambda g: (g,))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return add(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add(a, -b)
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        s = float(b)
        return _result("mul", a.data * s, (a,), lambda g: (g * s,))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return mul(a, 1.0 / float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _result("log", np.log(ad), (a,), lambda g: (g / ad,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _result("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _result("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * ad))
    out = ad * sig
    return _result("silu", out, (a,), lambda g: (g * (sig + out * (1.0 - sig)),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _result("clip", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("maximum", a, b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return _result("maximum", out, (a, b), lambda g: (g * pick_a, g * ~pick_a))


def minimum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("minimum", a, b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return _result("minimum", out, (a, b), lambda g: (g * pick_a, g * ~pick_a))


def interp(a, knots: np.ndarray, values: np.ndarray) -> Tensor:
    """Piecewise-linear lookup through ``(knots, values)``; flat outside."""
    a = _as_tensor(a)
    knots = np.asarray(knots, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
        raise ShapeError(f"interp: knots {knots.shape} / values {values.shape} must be equal 1-D, size >= 2")
    ad = a.data
    out = np.interp(ad, knots, values)
    slopes = np.diff(values) / np.diff(knots)
    seg = np.clip(np.searchsorted(knots, ad, side="right") - 1, 0, slopes.size - 1)
    inside = (ad >= knots[0]) & (ad <= knots[-1])
    deriv = np.where(inside, slopes[seg], 0.0)
    return _result("interp", out, (a,), lambda g: (g * deriv,))


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(B, n, k) @ (B, k, m)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        flat = ad.reshape(-1, ad.shape[-1])

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ bd.T, flat.T @ g2)

        return _result("matmul", ad @ bd, (a, b), back)
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(
        "matmul",
        ad @ bd,
        (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw)))


def conv2d(x, w, stride: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input, OIHW kernel, zero "same" padding.

    With ``stride > 1`` the output is the stride-subsampled "same" result,
    i.e. spatial size ``ceil(H / stride) x ceil(W / stride)``.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = _pad_same(x.data, kh, kw)
    ho, wo = -(-h // stride), -(-wd // stride)
    # cols[n, i, j, c, a, b] = xp[n, c, i*stride + a, j*stride + b]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(w.shape)
        if not x.requires_grad:
            return (None, gw)
        # col2im in NHWC so each accumulation reads contiguous channel rows
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh * kw)
        gxp = np.zeros((n, xp.shape[2], xp.shape[3], c))
        for a in range(kh):
            for b in range(kw):
                gxp[:, a : a + (ho - 1) * stride + 1 : stride, b : b + (wo - 1) * stride + 1 : stride] += (
                    gcols[..., a * kw + b]
                )
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        return (gxp[:, ph : ph + h, pw : pw + wd].transpose(0, 3, 1, 2), gw)

    return _result("conv2d", np.ascontiguousarray(out), (x, w), back)


def add_bias(x, b) -> Tensor:
    """Add a bias vector along the channel axis.

    ``b`` of shape ``(C,)`` is added along axis 1 of a 4-D input and along the
    last axis otherwise; ``b`` of shape ``(N, C)`` adds a per-sample bias to an
    ``(N, C, H, W)`` input.
    """
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim == 1:
        axis = 1 if x.ndim == 4 else x.ndim - 1
        if x.shape[axis] != b.shape[0]:
            raise ShapeError(f"add_bias: shape mismatch {x.shape} vs {b.shape}")
        shape = [1] * x.ndim
        shape[axis] = b.shape[0]
        sum_axes = tuple(i for i in range(x.ndim) if i != axis)
        return _result(
            "add_bias", x.data + b.data.reshape(shape), (x, b), lambda g: (g, g.sum(axis=sum_axes))
        )
    if b.ndim == 2 and x.ndim == 4 and x.shape[:2] == b.shape:
        return _result(
            "add_bias", x.data + b.data[:, :, None, None], (x, b), lambda g: (g, g.sum(axis=(2, 3)))
        )
    raise ShapeError(f"add_bias: shape mismatch {x.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# reductions and structure


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result("reduce_sum", np.sum(x.data, axis=axes, keepdims=keepdims), (x,), back)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(reduce_sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def _reduce_extreme(kind, fn, x, axis, keepdims):
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = fn(x.data, axis=axes, keepdims=True)
    # gradient goes to the first extreme element along the reduced axes
    moved = np.moveaxis(x.data, axes, range(x.ndim - len(axes), x.ndim))
    flat = moved.reshape(moved.shape[: x.ndim - len(axes)] + (-1,))
    pick = flat.argmax(axis=-1) if fn is np.max else flat.argmin(axis=-1)
    onehot = np.zeros_like(flat)
    np.put_along_axis(onehot, pick[..., None], 1.0, axis=-1)
    mask = np.moveaxis(onehot.reshape(moved.shape), range(x.ndim - len(axes), x.ndim), axes)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * mask,)

    res = out if keepdims else np.squeeze(out, axis=axes)
    return _result(kind, np.asarray(res, dtype=np.float64), (x,), back)


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme("reduce_max", np.max, x, axis, keepdims)


def reduce_min(x, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme("reduce_min", np.min, x, axis, keepdims)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _result(
        "concat",
        np.concatenate([t.data for t in ts], axis=ax),
        tuple(ts),
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def slice_(x, index) -> Tensor:
    """Basic (non-fancy) indexing: ints, slices, Ellipsis."""
    x = _as_tensor(x)
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not (isinstance(item, (int, slice, np.integer)) or item is Ellipsis):
            raise ShapeError(f"slice: unsupported index {item!r} for shape {x.shape}")
    out = x.data[index]
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result("slice", np.array(out), (x,), back)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: shape mismatch {old} vs {tuple(shape)}") from exc
    return _result("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (x,), back)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the two trailing axes of an NCHW tensor."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return _result(
        "upsample",
        out,
        (x,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
    )


_OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "square": square,
    "abs": absolute,
    "relu": relu,
    "silu": silu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "clip": clip,
    "maximum": maximum,
    "minimum": minimum,
    "interp": interp,
    "matmul": matmul,
    "conv2d": conv2d,
    "add_bias": add_bias,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "reduce_max": reduce_max,
    "reduce_min": reduce_min,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "softmax": softmax,
    "upsample": upsample_nearest,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward_op("conv2d", x, w, stride=2)``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    if kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ----------------------------------------------------------------------------
# backward pass


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, parents before children."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to each named parameter.

    Parameters not reachable from ``loss`` get a zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(topological_order(loss)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                pg = np.reshape(pg, parent.shape)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {
        name: np.array(grads[id(p)], dtype=np.float64) if id(p) in grads else np.zeros(p.shape)
        for name, p in params.items()
    }


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over probed entries of ``|analytic - numeric| / max(1, |numeric|)``.

    ``numeric`` is the central difference ``(f(p + h) - f(p - h)) / 2h``.
    ``f`` receives a mapping of the parameters and must return a scalar.
    With ``coords`` set, that many randomly chosen entries of every parameter
    are probed instead of all of them.
    """
    if not 1e-8 < step < 1e-2:
        raise ValueError(f"step must lie in (1e-8, 1e-2), got {step}")
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    base = {k: Tensor(v.data, requires_grad=True, name=k) for k, v in params.items()}
    loss = f(base)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: loss is not finite")
    analytic = backward(loss, base)

    def evaluate(name: str, arr: np.ndarray) -> float:
        probe = dict(base)
        probe[name] = Tensor(arr, name=name, _check=False)
        with no_grad():
            val = f(probe).item()
        if not np.isfinite(val):
            raise NonFiniteError(f"grad_check: non-finite loss while probing {name}")
        return val

    worst = 0.0
    for name, p in base.items():
        flat = p.data.ravel()
        if coords is None or coords >= flat.size:
            probe_at = range(flat.size)
        else:
            probe_at = (rng or np.random.default_rng(0)).choice(flat.size, size=coords, replace=False)
        for i in probe_at:
            arr = flat.copy()
            arr[i] = flat[i] + step
            hi = evaluate(name, arr.reshape(p.shape))
            arr[i] = flat[i] - step
            lo = evaluate(name, arr.reshape(p.shape))
            numeric = (hi - lo) / (2.0 * step)
            err = abs(analytic[name].ravel()[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
