"""Dense float tensors with taped reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array (float32 for training, float64 for
the verification mode used by gradient checks). Primitives compute their
forward value and, when a :class:`Tape` is active on the current thread,
record a node carrying one vector-Jacobian closure per differentiable
input. The tape is a linear record in execution order, so walking it in
reverse visits nodes in reverse topological order; gradients accumulate
additively at fan-out.

Integer inputs (token ids, labels, gather indices) are plain numpy int
arrays, never Tensors: nothing differentiates through them.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import DataError, GradientError, ShapeMismatchError

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable-by-convention dense array; ``name`` marks trainable leaves."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class _Node:
    __slots__ = ("out", "inputs", "vjps")

    def __init__(self, out, inputs, vjps):
        self.out = out
        self.inputs = inputs
        self.vjps = vjps


class Tape:
    """Ordered record of primitive ops for one trial's thread of execution."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.watched: dict[str, Tensor] = {}
        self._produced: set[int] = set()

    def watch(self, params) -> None:
        """Register named leaf tensors whose gradients backward() must report."""
        for name, t in params.items():
            if not isinstance(t, Tensor):
                raise GradientError(f"watched parameter {name!r} is not a Tensor")
            self.watched[name] = t

    def record(self, out: Tensor, inputs, vjps) -> None:
        self.nodes.append(_Node(out, tuple(inputs), tuple(vjps)))
        self._produced.add(id(out))

    def __enter__(self) -> "Tape":
        if getattr(_STATE, "tape", None) is not None:
            raise GradientError("a Tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = None


_STATE = threading.local()


def active_tape() -> Tape | None:
    return getattr(_STATE, "tape", None)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every watched leaf (zeros if unreached)."""
    if loss.data.shape != ():
        raise GradientError(
            f"loss must be a scalar, got shape {loss.data.shape}")
    if id(loss) not in tape._produced:
        raise GradientError("loss was not produced under this tape")
    needed = set(tape._produced)
    needed.update(id(t) for t in tape.watched.values())
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.out), None)
        if g_out is None:
            continue
        for tin, vjp in zip(node.inputs, node.vjps):
            if vjp is None or id(tin) not in needed:
                continue
            g = vjp(g_out)
            prev = grads.get(id(tin))
            grads[id(tin)] = g if prev is None else prev + g
    return {
        name: grads.get(id(t), np.zeros_like(t.data))
        for name, t in tape.watched.items()
    }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _reduce_to(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = arr.ndim - len(shape)
    if extra:
        arr = arr.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and arr.shape[i] != 1)
    if keep:
        arr = arr.sum(axis=keep, keepdims=True)
    return arr


def _record(out, inputs, vjps) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjps)
    return out


def _swap(arr: np.ndarray) -> np.ndarray:
    return arr.swapaxes(-1, -2)


def _rows2d(arr: np.ndarray, cols: int) -> np.ndarray:
    return np.ascontiguousarray(arr).reshape(-1, cols)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch-broadcasting on leading axes."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError("matmul", a=a.shape, b=b.shape)
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), (
        lambda g, bd=b.data, sh=a.data.shape: _reduce_to(g @ _swap(bd), sh),
        lambda g, ad=a.data, sh=b.data.shape: _reduce_to(_swap(ad) @ g, sh),
    ))


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, a=a.shape, b=b.shape) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), (
        lambda g, sh=a.data.shape: _reduce_to(g, sh),
        lambda g, sh=b.data.shape: _reduce_to(g, sh),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a, b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), (
        lambda g, bd=b.data, sh=a.data.shape: _reduce_to(g * bd, sh),
        lambda g, ad=a.data, sh=b.data.shape: _reduce_to(g * ad, sh),
    ))


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record(out, (a,), (lambda g: g * s,))


def tsum(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))
    def vjp(g, sh=a.data.shape, ax=axis):
        if ax is None:
            return np.full(sh, g, dtype=g.dtype)
        return np.broadcast_to(np.expand_dims(g, ax), sh).copy()
    return _record(out, (a,), (vjp,))


def mean(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis))
    def vjp(g, sh=a.data.shape, ax=axis, count=n):
        return np.broadcast_to(np.expand_dims(g, ax), sh).copy() / count
    return _record(out, (a,), (vjp,))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), (lambda g, sh=a.data.shape: g.reshape(sh),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = Tensor(a.data.transpose(axes))
    return _record(out, (a,), (lambda g, p=tuple(inv): g.transpose(p),))


def gelu(x: Tensor) -> Tensor:
    flat = np.ascontiguousarray(x.data).ravel()
    out = Tensor(kernels.gelu_fwd(flat).reshape(x.shape))
    def vjp(g, xf=flat, sh=x.data.shape):
        return kernels.gelu_bwd(xf, np.ascontiguousarray(g).ravel()).reshape(sh)
    return _record(out, (x,), (vjp,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    moved = np.moveaxis(x.data, axis, -1)
    cols = moved.shape[-1]
    p2d = kernels.softmax2d_fwd(_rows2d(moved, cols))
    out = Tensor(np.moveaxis(p2d.reshape(moved.shape), -1, axis))
    def vjp(g, p=p2d, sh=moved.shape, ax=axis, c=cols):
        g2d = _rows2d(np.moveaxis(g, ax, -1), c)
        gin = kernels.softmax2d_bwd(p, g2d).reshape(sh)
        return np.moveaxis(gin, -1, ax)
    return _record(out, (x,), (vjp,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance."""
    h = x.data.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeMismatchError("layer_norm", x=x.shape, gamma=gamma.shape,
                                 beta=beta.shape)
    x2d = _rows2d(x.data, h)
    y, xhat, rstd = kernels.layernorm_fwd(x2d, gamma.data, beta.data, eps)
    out = Tensor(y.reshape(x.data.shape))
    def make(which):
        def vjp(g, xh=xhat, rs=rstd, gm=gamma.data, sh=x.data.shape, c=h):
            gin, dgamma, dbeta = kernels.layernorm_bwd(xh, rs, gm, _rows2d(g, c))
            return (gin.reshape(sh), dgamma, dbeta)[which]
        return vjp
    return _record(out, (x, gamma, beta), (make(0), make(1), make(2)))


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}), "
            f"got min={int(ids.min())} max={int(ids.max())}")
    out = Tensor(table.data[ids])
    def vjp(g, idx=ids.ravel(), sh=table.data.shape):
        buf = np.zeros(sh, dtype=g.dtype)
        kernels.scatter_add_rows(buf, idx, _rows2d(g, sh[-1]))
        return buf
    return _record(out, (table,), (vjp,))


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into place."""
    if x.data.ndim != 2:
        raise ShapeMismatchError("take_rows", x=x.shape)
    idx = np.asarray(idx)
    out = Tensor(x.data[idx])
    def vjp(g, sh=x.data.shape, ii=idx):
        buf = np.zeros(sh, dtype=g.dtype)
        kernels.scatter_add_rows(buf, ii, _rows2d(g, sh[-1]))
        return buf
    return _record(out, (x,), (vjp,))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Accepts 1-D logits with a scalar label, or (N, C) logits with N labels.
    """
    squeeze = logits.data.ndim == 1
    lg = logits.data[None, :] if squeeze else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lg.ndim != 2 or lab.shape != (lg.shape[0],):
        raise ShapeMismatchError("cross_entropy", logits=logits.shape,
                                 labels=np.asarray(labels).shape)
    if lab.min() < 0 or lab.max() >= lg.shape[1]:
        raise DataError(
            f"cross_entropy: label out of range [0, {lg.shape[1]})")
    lg_c = np.ascontiguousarray(lg)
    probs = kernels.softmax2d_fwd(lg_c)
    n = lg.shape[0]
    shifted = lg_c - lg_c.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = Tensor(np.asarray(-logp[np.arange(n), lab].mean(), dtype=lg.dtype))
    def vjp(g, p=probs, y=lab, m=n, sq=squeeze, sh=logits.data.shape):
        gin = p.copy()
        gin[np.arange(m), y] -= 1.0
        gin *= g / m
        return gin.reshape(sh) if sq else gin
    return _record(loss, (logits,), (vjp,))
