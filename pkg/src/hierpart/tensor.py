"""A small define-by-run reverse-mode autodiff engine over numpy arrays.

Operations record themselves on the innermost active :class:`Tape` whenever
at least one input requires a gradient. Outside a tape everything is plain
numpy arithmetic, which is what the finite-difference checks rely on.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12
BN_MOMENTUM = 0.9
BN_VAR_FLOOR = 1e-5
CHECKPOINT_FORMAT = "hpk.v1"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class MissingTapeError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf with first/second moment slots for the optimizer."""

    __slots__ = ("name", "m", "v")

    def __init__(self, name, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: object


class Tape:
    """Ordered record of primitive applications during one forward pass."""

    _stack: list = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    @classmethod
    def active(cls):
        return cls._stack[-1] if cls._stack else None

    def record(self, out, inputs, backward):
        out.requires_grad = True
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward))

    def gradient(self, loss, params):
        """Gradients of scalar ``loss`` keyed by parameter name.

        Parameters the loss does not reach get zero gradients.
        """
        if loss._tape is not self:
            raise MissingTapeError("loss was not produced on this tape; run the forward pass inside it")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {p.name: grads.get(id(p), np.zeros_like(p.data)) for p in params}

    def release(self):
        """Drop recorded nodes so intermediates are freed without waiting for the cycle collector."""
        for node in self.nodes:
            node.out._tape = None
        self.nodes.clear()


def backward(loss, params):
    """Gradient map for ``params`` from the tape that produced ``loss``."""
    if loss._tape is None:
        raise MissingTapeError("no recorded forward pass for this tensor; backward called before forward")
    return loss._tape.gradient(loss, params)


def _emit(data, inputs, backward_fn):
    out = Tensor(data)
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"{name}: non-finite input")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _emit(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(a.data * b.data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _check_finite("matmul", a.data, b.data)
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a):
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(a):
    """Softmax over the last axis."""
    _check_finite("softmax", a.data)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit(s, (a,), bw)


def log(a):
    """Natural log clamped at ``LOG_FLOOR``; no gradient below the floor."""
    _check_finite("log", a.data)
    safe = np.maximum(a.data, LOG_FLOOR)
    live = a.data > LOG_FLOOR
    return _emit(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def sum(a, axis=None):  # noqa: A001
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(data, tuple(tensors), bw)


def reshape(a, shape):
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def pick(a, index):
    """``a[i, index[i]]`` for a 2-d ``a``."""
    index = np.asarray(index)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: incompatible shapes {a.shape} and {index.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _emit(a.data[rows, index], (a,), bw)


def select_columns(h, z):
    """Per-row ``H_i z_i`` with ``h`` of shape (n, C, F).

    ``z`` is (n, C) or carries a leading sample axis (L, n, C); the output
    is (n, F) or (L, n, F). With a one-hot ``z`` this is an exact column
    selection and only the selected column receives gradient.
    """
    h, z = as_tensor(h), as_tensor(z)
    if h.ndim != 3 or z.ndim not in (2, 3) or h.shape[:2] != z.shape[-2:]:
        raise ShapeError(f"select_columns: incompatible shapes {h.shape} and {z.shape}")
    if z.ndim == 2:
        out = np.einsum("ncf,nc->nf", h.data, z.data)

        def bw(g):
            return g[:, None, :] * z.data[:, :, None], np.einsum("ncf,nf->nc", h.data, g)

    else:
        out = np.einsum("ncf,lnc->lnf", h.data, z.data)

        def bw(g):
            return np.einsum("lnf,lnc->ncf", g, z.data), np.einsum("ncf,lnf->lnc", h.data, g)

    return _emit(out, (h, z), bw)


def straight_through(hard, soft):
    """Forward value ``hard``; backward routes ``g * hard`` into ``soft``."""
    hard = np.asarray(hard, dtype=soft.data.dtype)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: incompatible shapes {hard.shape} and {soft.shape}")
    return _emit(hard.copy(), (soft,), lambda g: (g * hard,))


def neighbor_smooth(h, idx, w):
    """Row ``i`` becomes ``sum_k w[i, k] * h[idx[i, k]]``."""
    if idx.shape != w.shape or idx.shape[0] != h.shape[0]:
        raise ShapeError(f"neighbor_smooth: incompatible shapes {h.shape}, {idx.shape}, {w.shape}")
    n = h.shape[0]
    return _emit(
        kernels.neighbor_gather(h.data, idx, w), (h,), lambda g: (kernels.neighbor_scatter(g, idx, w, n),)
    )


def stop_gradient(a):
    return Tensor(a.data.copy())


@dataclass
class NormStats:
    """Running statistics of one feature-standardization layer."""

    mean: np.ndarray
    var: np.ndarray


def batch_norm(x, gamma, beta, stats, training):
    """Standardize features over the rows of ``x`` then apply ``gamma``/``beta``.

    Training mode uses batch statistics and folds them into ``stats`` with
    momentum ``BN_MOMENTUM``; inference mode is the fixed affine map given by
    the running statistics.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: incompatible shapes {x.shape}, {gamma.shape}, {beta.shape}")
    _check_finite("batch_norm", x.data)
    if not training:
        inv = 1.0 / np.sqrt(np.maximum(stats.var, BN_VAR_FLOOR))
        xhat = _emit((x.data - stats.mean) * inv, (x,), lambda g: (g * inv,))
        return add(mul(xhat, gamma), beta)

    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    floored = var > BN_VAR_FLOOR
    denom = np.sqrt(np.maximum(var, BN_VAR_FLOOR))
    xhat_data = xc / denom
    stats.mean = BN_MOMENTUM * stats.mean + (1.0 - BN_MOMENTUM) * mu
    stats.var = BN_MOMENTUM * stats.var + (1.0 - BN_MOMENTUM) * var

    def bw(g):
        gc = g - g.mean(axis=0)
        # variance below the floor is treated as a constant
        corr = np.where(floored, xhat_data * (g * xhat_data).mean(axis=0), 0.0)
        return ((gc - corr) / denom,)

    xhat = _emit(xhat_data, (x,), bw)
    return add(mul(xhat, gamma), beta)


# --------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    unreliable: bool = False

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric):
    """Largest entrywise deviation relative to the block's gradient scale."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def finite_difference_check(loss_fn, params, step=1e-5, names=None):
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the whole forward pass from the parameters on
    each call and fix every random draw internally. ``names`` restricts the
    comparison to a subset of parameters.
    """
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)
    base = loss_fn().item()
    again = loss_fn().item()
    report = GradCheckReport(unreliable=base != again)
    for p in params:
        if names is not None and p.name not in names:
            continue
        num = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_fn().item()
            flat[j] = orig - step
            down = loss_fn().item()
            flat[j] = orig
            nflat[j] = (up - down) / (2 * step)
        report.errors[p.name] = relative_error(analytic[p.name], num)
    return report


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, buffers, meta):
    """Write parameters and buffers (name -> array) plus JSON metadata."""
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    arrays.update({f"buffer/{k}": np.asarray(v) for k, v in buffers.items()})
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            fmt = str(z["__format__"]) if "__format__" in z.files else None
            if fmt != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: expected format {CHECKPOINT_FORMAT}, found {fmt}")
            meta = json.loads(str(z["__meta__"]))
            params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
            buffers = {k[len("buffer/"):]: z[k] for k in z.files if k.startswith("buffer/")}
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return params, buffers, meta
