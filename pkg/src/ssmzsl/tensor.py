"""Dense tensors with a tape-based reverse-mode differentiator.

Values live in numpy arrays (row-major, float32 or float64).  Operations on
tensors that require gradients are recorded on the active :class:`Tape`;
``Tape.backward`` replays the records in reverse creation order.

Broadcasting is deliberately narrow: elementwise ops accept equal shapes or a
scalar operand.  Anything else goes through :func:`broadcast_to` so every
expansion is explicit on the tape.
"""
from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()
_leaf_ids = itertools.count()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad_id", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"unsupported precision {arr.dtype}")
        self.data = arr if arr.flags.c_contiguous else arr.copy()  # keeps 0-d arrays 0-d
        self.requires_grad = requires_grad
        self.grad_id = next(_leaf_ids) if requires_grad else None
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", grad_id={self.grad_id}" if self.grad_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Sliced:
    """Gradient contribution confined to ``index`` of the parent buffer."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class _Node:
    __slots__ = ("kind", "out", "parents", "backward")

    def __init__(self, kind, out, parents, backward):
        self.kind = kind
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations evaluated inside the block on
    tracked tensors append one node each.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, kind, out, parents, backward):
        node = _Node(kind, out, parents, backward)
        out._node = node
        self.nodes.append(node)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss``, keyed by leaf ``grad_id``.

        Leaves listed in ``wrt`` that the loss does not reach get zeros.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.tracked:
            raise ValueError("loss is not recorded on a tape")
        # parent -> [gradient buffer, buffer is private to this entry]
        grads: dict[Tensor, list] = {loss: [np.ones_like(loss.data), True]}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad:
            leaves[loss.grad_id] = loss
        for node in reversed(self.nodes):
            entry = grads.pop(node.out, None)
            if entry is None:
                continue
            contributions = node.backward(entry[0])
            for parent, contrib in zip(node.parents, contributions):
                if contrib is None or not parent.tracked:
                    continue
                if parent._node is None:
                    leaves[parent.grad_id] = parent
                _accumulate(grads, parent, contrib)
        table = {gid: grads[t][0] if t in grads else np.zeros_like(t.data)
                 for gid, t in leaves.items()}
        for t in wrt or ():
            if t.grad_id not in table:
                table[t.grad_id] = np.zeros_like(t.data)
        return table

    def gradients(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        table = self.backward(loss, params)
        return [table[p.grad_id] for p in params]


def _accumulate(grads, parent, contrib):
    entry = grads.get(parent)
    if isinstance(contrib, _Sliced):
        if entry is None:
            entry = grads[parent] = [np.zeros_like(parent.data), True]
        elif not entry[1]:
            entry[0], entry[1] = entry[0].copy(), True
        entry[0][contrib.index] += contrib.value
        return
    contrib = np.asarray(contrib, dtype=parent.dtype)
    if contrib.shape != parent.shape:
        raise RuntimeError(f"gradient shape {contrib.shape} does not match {parent.shape}")
    if entry is None:
        grads[parent] = [contrib, False]
    else:
        grads[parent] = [entry[0] + contrib, True]


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    tape = _active_tape()
    if tape is None:
        raise ValueError("backward called outside of a Tape context")
    return tape.backward(loss, wrt)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _make(kind, data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.tracked for p in parents):
        tape.record(kind, out, parents, backward_fn)
    return out


def _unbroadcast_scalar(g, shape):
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def _check_elementwise(kind, a: Tensor, b: Tensor):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape} "
                     "(only equal shapes or a scalar operand are supported)")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    b = _lift(b, a)
    _check_elementwise("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast_scalar(g, a.shape), _unbroadcast_scalar(g, b.shape)))


def sub(a, b) -> Tensor:
    b = _lift(b, a)
    _check_elementwise("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast_scalar(g, a.shape), _unbroadcast_scalar(-g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_elementwise("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast_scalar(g * b.data, a.shape),
                            _unbroadcast_scalar(g * a.data, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make("exp", y, (x,), lambda g: (g * y,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0, x.data).astype(x.dtype)

    def bw(g):
        # logistic sigmoid, overflow-free
        return (g * np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype),)

    return _make("softplus", y, (x,), bw)


def absolute(x: Tensor) -> Tensor:
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


TAYLOR_CUTOFF = 1e-4


def exp_ratio(x: Tensor) -> Tensor:
    """Elementwise ``(exp(z) - 1) / z`` with a Taylor branch for ``|z| < 1e-4``."""
    z = x.data
    small = np.abs(z) < TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    ez = np.exp(z)
    y = np.where(small, 1 + z / 2 + z * z / 6, np.expm1(safe) / safe).astype(x.dtype)
    dy = np.where(small, 0.5 + z / 3 + z * z / 8, (ez * safe - np.expm1(safe)) / (safe * safe))
    dy = dy.astype(x.dtype)
    return _make("exp_ratio", y, (x,), lambda g: (g * dy,))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "exp": exp, "relu": relu,
    "softplus": softplus, "scale": scale, "abs": absolute, "exp_ratio": exp_ratio,
}


def elementwise(kind: str, *inputs) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes.

    ``b`` is either a plain matrix shared across ``a``'s leading axes or a
    stack with exactly ``a``'s leading axes.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and b.shape[:-2] != a.shape[:-2]):
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _make("matmul", out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the trailing axis of ``x``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias {b.shape} does not match weight {w.shape}")
    flat = x.data.reshape(-1, w.shape[0])
    out = flat @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(x.shape[:-1] + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = flat.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make("linear", out, parents, bw)


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce(kind: str, x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    if kind == "sum":
        out = x.data.sum(axis=axes)
        return _make("sum", out, (x,),
                     lambda g: (np.broadcast_to(g.reshape(kept_shape), x.shape).copy(),))
    if kind == "mean":
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        out = x.data.mean(axis=axes)
        inv = x.dtype.type(1.0 / count)
        return _make("mean", out, (x,),
                     lambda g: (np.broadcast_to(g.reshape(kept_shape) * inv, x.shape).copy(),))
    if kind == "l2_norm":
        norm = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=True))
        safe = np.where(norm > 0, norm, 1)

        def bw(g):
            return (np.where(norm > 0, x.data / safe, 0) * g.reshape(kept_shape),)

        return _make("l2_norm", norm.reshape([n for i, n in enumerate(x.shape) if i not in axes]),
                     (x,), bw)
    raise ValueError(f"unknown reduction {kind!r}")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``; a zero slice stays zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    y = x.data / denom

    def bw(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(big, (g - y * proj) / denom, g / eps),)

    return _make("l2_normalize", y, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", y, (x,), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ValueError(f"layernorm: gain {gain.shape}/bias {bias.shape} do not match axis extent {n}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    gv = gain.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gv + bias.data.reshape(bshape)
    others = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        dxhat = g * gv
        gx = inv * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        return gx, (g * xhat).sum(axis=others), g.sum(axis=others)

    return _make("layernorm", out.astype(x.dtype), (x, gain, bias), bw)


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine along the trailing axis: ``u.v / (max(|u|,eps) max(|v|,eps))``."""
    if u.shape != v.shape:
        raise ValueError(f"cosine_similarity: shapes {u.shape} and {v.shape} differ")
    nu = np.sqrt((u.data * u.data).sum(axis=-1, keepdims=True))
    nv = np.sqrt((v.data * v.data).sum(axis=-1, keepdims=True))
    du, dv = np.maximum(nu, eps), np.maximum(nv, eps)
    dot = (u.data * v.data).sum(axis=-1, keepdims=True)
    s = dot / (du * dv)

    def bw(g):
        g = g[..., None]
        gu = v.data / (du * dv) - np.where(nu >= eps, s * u.data / (du * du), 0)
        gv = u.data / (du * dv) - np.where(nv >= eps, s * v.data / (dv * dv), 0)
        return g * gu, g * gv

    return _make("cosine", s[..., 0], (u, v), bw)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    return _make("transpose", np.ascontiguousarray(x.data.transpose(perm)), (x,),
                 lambda g: (g.transpose(inv),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit numpy-style expansion; the backward pass sums the copies."""
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    lead = len(shape) - x.ndim
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(x.shape) if n == 1 and shape[lead + i] != 1)

    def bw(g):
        return (g.sum(axis=axes, keepdims=True).reshape(x.shape) if axes else g,)

    return _make("broadcast", out, (x,), bw)


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Select along ``axis`` by an integer or an integer array."""
    axis = axis % x.ndim
    lead = (slice(None),) * axis
    if np.isscalar(index) or np.ndim(index) == 0:
        i = int(index)
        key = lead + (i,)
        return _make("take", x.data[key].copy(), (x,), lambda g: (_Sliced(key, g),))
    idx = np.asarray(index, dtype=np.intp)
    n = x.shape[axis]
    out = np.take(x.data, idx, axis=axis)
    if idx.size and np.array_equal(idx, np.arange(idx[0], idx[0] + idx.size)):
        key = lead + (slice(int(idx[0]), int(idx[0]) + idx.size),)
        return _make("take", out, (x,), lambda g: (_Sliced(key, g),))
    if idx.size == n and np.array_equal(np.sort(idx), np.arange(n)):
        inv = np.argsort(idx)
        return _make("take", out, (x,), lambda g: (np.take(g, inv, axis=axis),))

    def bw(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, lead + (idx,), g)
        return (buf,)

    return _make("take", out, (x,), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    return _make("stack", out, tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        lead = (slice(None),) * ax
        return tuple(g[lead + (slice(bounds[i], bounds[i + 1]),)] for i in range(len(tensors)))

    return _make("concat", out, tuple(tensors), bw)


# ---------------------------------------------------------------- gradient checking

def _rel_err(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``param.data``, perturbed in place."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def gradient_errors(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5) -> list[float]:
    """Max relative error between tape and central-difference gradients, per parameter."""
    with Tape() as tape:
        loss = fn()
        analytic = tape.gradients(loss, params)
    return [float(_rel_err(a, numeric_gradient(fn, p, h)).max(initial=0.0))
            for a, p in zip(analytic, params)]


def finite_diff_check(fn: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    x = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
               requires_grad=True)
    return gradient_errors(lambda: fn(x), [x], h)[0]
