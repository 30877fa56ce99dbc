"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to a :class:`Var`. Calling
:func:`backward` replays the tape in reverse creation order, which is a valid
reverse topological order because a node can only be created after its
parents.

Every primitive in this module accepts plain ``numpy`` arrays as well. When
none of the inputs is a :class:`Var` the primitive just returns the array
result and nothing is recorded, so model code written against these
primitives runs unchanged for inference.
"""

from __future__ import annotations

import numpy as np

from adacnp.errors import ContractError

__all__ = [
    "Var", "Tape", "backward", "value_of",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose",
    "relu", "tanh", "softplus", "exp", "log", "square",
    "sum", "mean", "concat", "take", "reshape", "softmax",
]


class Var:
    """A node on a tape holding a float64 array value."""

    __slots__ = ("value", "parents", "vjp", "name", "tape")

    def __init__(self, value, tape, parents=(), vjp=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)


class Tape:
    """Ordered record of primitive applications.

    Only one thread may record onto a tape at a time.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def leaf(self, value, name):
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        var = Var(np.asarray(value, dtype=np.float64), self, name=name)
        self.nodes.append(var)
        self.leaves[name] = var
        return var

    def __len__(self):
        return len(self.nodes)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(inputs):
    for x in inputs:
        if isinstance(x, Var):
            return x.tape
    return None


def _record(out, inputs, vjp):
    """Wrap ``out`` in a Var if any input is a Var, otherwise return it raw."""
    tape = _tape_of(inputs)
    if tape is None:
        return out
    var = Var(out, tape, parents=tuple(inputs), vjp=vjp)
    tape.nodes.append(var)
    return var


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(tape, loss):
    """Gradients of the scalar ``loss`` with respect to every leaf of ``tape``.

    Returns a dict keyed by leaf name. Leaves that do not influence the loss
    get a zero array of their own shape.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ContractError("loss must be a Var recorded on the given tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not isinstance(parent, Var):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {
        name: grads.get(id(leaf), np.zeros_like(leaf.value))
        for name, leaf in tape.leaves.items()
    }


# --- elementwise -----------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(
        out, (a, b),
        lambda g: (_unbroadcast(g / bv, sa), _unbroadcast(-g * out / bv, sb)),
    )


def neg(a):
    return _record(-value_of(a), (a,), lambda g: (-g,))


def square(a):
    av = value_of(a)
    return _record(av * av, (a,), lambda g: (2.0 * av * g,))


def exp(a):
    out = np.exp(value_of(a))
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    av = value_of(a)
    return _record(np.log(av), (a,), lambda g: (g / av,))


def relu(a):
    av = value_of(a)
    mask = av > 0
    return _record(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    out = np.tanh(value_of(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def softplus(a):
    av = value_of(a)
    return _record(np.logaddexp(0.0, av), (a,), lambda g: (g * _sigmoid(av),))


# --- linear algebra and shape ----------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ContractError("matmul primitive expects 2-D operands")
    out = av @ bv
    return _record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return _record(value_of(a).T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    av = value_of(a)
    old = av.shape
    return _record(av.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum(a, axis=None, keepdims=False):
    av = value_of(a)
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(av.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    count = av.size if axis is None else av.shape[axis]
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def concat(parts, axis=-1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return _record(out, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, index):
    """Rows ``a[index]`` along axis 0; repeated indices accumulate gradient."""
    av = value_of(a)
    index = np.asarray(index)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return (out,)

    return _record(av[index], (a,), vjp)


def softmax(a, axis=-1):
    """Max-shifted softmax along ``axis``."""
    av = value_of(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), vjp)
