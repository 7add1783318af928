"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op that has at least one ``requires_grad`` input records a node with a
monotonically increasing sequence number. ``backward`` gathers the nodes
reachable from the loss into a :class:`Tape`, replays them in reverse
recording order, accumulates into leaf ``.grad`` buffers and then frees the
graph, so a second ``backward`` through the same graph raises.
"""
import itertools
import threading

import numpy as np

_seq = itertools.count()
_seq_lock = threading.Lock()


class NumericError(FloatingPointError):
    """An op produced NaN/Inf or was applied outside its domain."""


class GraphError(RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, detached loss, reuse)."""


def _next_seq():
    with _seq_lock:
        return next(_seq)


def _check_finite(data, op):
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    return data


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_consumed", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor's reflected ops

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None
        self._seq = -1
        self._consumed = False
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators ------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    """Wrap an op result, recording it when any parent needs gradients."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._seq = _next_seq()
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._seq = -1
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log: argument must be positive")
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid_np(x):
    """Numerically stable logistic function on arrays."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus_np(x):
    # x + ln(1 + e^-x) for x > 0 avoids overflow of e^x
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def softplus(a):
    a = as_tensor(a)
    out = softplus_np(a.data)
    return _make(out, (a,), lambda g: (g * sigmoid_np(a.data),), "softplus")


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "exp": exp,
    "log": log, "square": square, "relu": relu, "softplus": softplus,
}


def elementwise(kind, a, b=None):
    """Dispatch by op name; binary kinds require ``b``."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        a, b = as_tensor(a), as_tensor(b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        axes.append(ax % ndim)
    return tuple(sorted(set(axes)))


def _expand_back(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    if a.size == 0:
        raise ValueError("empty reduction")
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        return (np.array(_expand_back(g, a.shape, axes, keepdims)),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    if a.size == 0:
        raise ValueError("empty reduction")
    n = int(np.prod([a.shape[ax] for ax in axes]))
    out = np.sum(a.data, axis=axes, keepdims=keepdims) / n

    def bw(g):
        return (np.array(_expand_back(g, a.shape, axes, keepdims)) / n,)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "mean")


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; gradient goes to the first maximal element."""
    a = as_tensor(a)
    if a.size == 0:
        raise ValueError("empty reduction")
    axes = _norm_axes(axis, a.ndim)
    keep = [ax for ax in range(a.ndim) if ax not in axes]
    moved = np.transpose(a.data, keep + list(axes))
    flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        for ax in axes:
            out = np.expand_dims(out, ax)

    def bw(g):
        if keepdims:
            g = np.squeeze(g, axis=axes)
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], np.asarray(g)[..., None], axis=-1)
        gm = gf.reshape(moved.shape)
        return (np.transpose(gm, np.argsort(keep + list(axes))),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "max")


def argmax(a, axis):
    """Index of the maximum along ``axis``; ties resolve to the lowest index.

    Returns a plain integer array, detached from the tape.
    """
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    if data.size == 0:
        raise ValueError("empty reduction")
    return np.argmax(data, axis=axis)


def reduce(kind, a, axis=None, keepdims=False):
    if kind == "sum":
        return reduce_sum(a, axis, keepdims)
    if kind == "mean":
        return reduce_mean(a, axis, keepdims)
    if kind == "max":
        return reduce_max(a, axis, keepdims)
    if kind == "argmax":
        return argmax(a, axis)
    raise ValueError(f"unknown reduction {kind!r}")


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index):
    a = as_tensor(a)
    out = np.array(a.data[index])

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), bw, "stack")


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(out, (a, b), bw, "where")


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class Tape:
    """The recorded operations reachable from one loss, in recording order."""

    def __init__(self, nodes):
        self.nodes = sorted(nodes, key=lambda t: t._seq)

    @classmethod
    def from_loss(cls, loss):
        seen = {}
        stack = [loss]
        while stack:
            node = stack.pop()
            if id(node) in seen or node._backward is None:
                continue
            seen[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        return cls(seen.values())

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def replay(self, loss):
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                if parent._backward is None:
                    parent.grad = parent.grad + pg if parent.grad is not None else np.array(pg)
                else:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg
        for node in self.nodes:
            node._backward = None
            node._parents = ()
            node._consumed = True


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward; rebuild the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss is detached from the tape (no input requires grad)")
    if loss._backward is None:
        loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return Tape([])
    tape = Tape.from_loss(loss)
    tape.replay(loss)
    loss._consumed = True
    return tape
