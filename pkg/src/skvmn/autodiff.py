"""Dense float64 tensors with a define-by-run tape for reverse-mode gradients.

Operations only get recorded while a :class:`Tape` is active (``with Tape():``)
and at least one operand requires a gradient. Outside a tape every op is a
plain numpy computation, which is what evaluation and finite differencing use.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape():
    ...     loss = (x * x).sum()
    >>> backward(loss)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError

_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives; replayed in reverse by backward."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, grad_fn):
        self.records.append((out, inputs, grad_fn))
        out._tape = self

    def backward(self, loss):
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced under this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        seen = {id(loss): loss}
        for out, inputs, grad_fn in reversed(self.records):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, grad_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    seen[key] = inp
        for key, t in seen.items():
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss):
    """Populate ``.grad`` on every differentiable ancestor of a scalar loss."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss was not produced under an active tape")
    loss._tape.backward(loss)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self.name = name

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
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, idx: take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, grad_fn):
    """Wrap a result and tape it when any input is differentiable."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    out.name = None
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, grad_fn)
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    try:
        out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None
    return _make(out, (a, b), grad_fn)


def sigmoid(x):
    x = as_tensor(x)
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x):
    """Softmax along the last axis, stabilised by subtracting the row max."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), grad_fn)


softmax_rows = softmax


def log(x):
    x = as_tensor(x)
    if np.any(~(x.data > 0)):
        bad = x.data[~(x.data > 0)].reshape(-1)[0]
        raise DomainError(f"log of non-positive value {bad!r}")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = as_tensor(x)
    xd = x.data
    return _make(np.logaddexp(0.0, xd), (x,), lambda g: (g * expit(xd),))


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()) if g.size == 1 else g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(out, (x,), grad_fn)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), grad_fn)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def take(x, idx):
    """Indexing (slices or integer arrays); gradients scatter-add back."""
    x = as_tensor(x)
    out = x.data[idx]
    if out.ndim == 0:
        out = out.reshape(1)
    shape = x.shape
    basic = _is_basic(idx)

    def grad_fn(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g.reshape(full[idx].shape)
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (x,), grad_fn)


def take_rows(table, rows):
    """Rows of a 2-D table, i.e. one-hot(rows) @ table."""
    table = as_tensor(table)
    rows = np.asarray(rows, dtype=np.int64)
    return take(table, rows)


def gather_steps(sources, which, fill_shape):
    """Row b of the result is row b of ``sources[which[b]]``, or zeros for -1.

    Used for hop connections: each batch row pulls its state from a different
    earlier time step.
    """
    sources = [as_tensor(s) for s in sources]
    which = np.asarray(which, dtype=np.int64)
    out = np.zeros(fill_shape)
    for k, src in enumerate(sources):
        rows = np.nonzero(which == k)[0]
        if rows.size:
            out[rows] = src.data[rows]

    def grad_fn(g):
        grads = []
        for k, src in enumerate(sources):
            gk = np.zeros(src.shape)
            rows = np.nonzero(which == k)[0]
            gk[rows] = g[rows]
            grads.append(gk)
        return tuple(grads)

    return _make(out, tuple(sources), grad_fn)


def transpose(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got shape {x.shape}")
    return _make(np.swapaxes(x.data, -1, -2).copy(), (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))
