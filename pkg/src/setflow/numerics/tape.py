"""Define-by-run reverse-mode differentiation over numpy arrays.

Every op accepts plain ``np.ndarray`` / scalars or :class:`Var` operands. When
no operand is a ``Var`` the op is a plain numpy call and returns an array, so
model code has a single path for recorded (training) and unrecorded
(inference, inversion) evaluation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    """A value recorded on a :class:`GradTape`."""

    __slots__ = ("value", "parents", "vjp", "tape", "index")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected ops

    def __init__(self, value, parents, vjp, tape, index):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class GradTape:
    """Records a single forward computation for one backward pass.

    ``params`` is an optional registry ``name -> array``; :func:`backward`
    returns a gradient for every registered name, exact zeros for parameters
    the output does not reach. Arrays are identified by object identity, so
    parameters must be updated in place between steps.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.nodes: list[Var] = []
        self._names: dict[int, str] = {}
        self._arrays: dict[str, np.ndarray] = {}
        self._leaves: dict[int, Var] = {}
        if params:
            for name, arr in params.items():
                self.register(name, arr)

    def register(self, name: str, arr: np.ndarray) -> None:
        if name in self._arrays and self._arrays[name] is not arr:
            raise ValueError(f"parameter name {name!r} registered twice")
        self._names[id(arr)] = name
        self._arrays[name] = arr

    @property
    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self._arrays)

    def param(self, arr: np.ndarray) -> Var:
        """Leaf node for a parameter array; repeated calls share one leaf."""
        leaf = self._leaves.get(id(arr))
        if leaf is not None:
            return leaf
        if id(arr) not in self._names:
            self.register(f"param{len(self._arrays)}", arr)
        leaf = self._record(arr, (), None)
        self._leaves[id(arr)] = leaf
        return leaf

    def _record(self, value, parents, vjp) -> Var:
        node = Var(value, parents, vjp, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self) -> None:
        self.nodes.clear()
        self._leaves.clear()


def backward(tape: GradTape, output: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. every registered parameter."""
    if not isinstance(output, Var):
        raise TypeError("output is not a recorded Var")
    if output.tape is not tape:
        raise ValueError("output was not produced under this tape")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")

    grads: list = [None] * len(tape.nodes)
    grads[output.index] = np.ones_like(output.value)
    for node in reversed(tape.nodes[: output.index + 1]):
        g = grads[node.index]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent is None or pg is None:
                continue
            acc = grads[parent.index]
            grads[parent.index] = pg if acc is None else acc + pg
        if node.parents:
            grads[node.index] = None  # free intermediate adjoints early

    out = {}
    for name, arr in tape._arrays.items():
        leaf = tape._leaves.get(id(arr))
        g = grads[leaf.index] if leaf is not None else None
        out[name] = np.zeros_like(arr) if g is None else np.asarray(g, dtype=np.float64).reshape(arr.shape)
    return out


# --------------------------------------------------------------------------
# op vocabulary


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> GradTape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _parent(x) -> Var | None:
    return x if isinstance(x, Var) else None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _elementwise(f, df: Callable, x):
    tape = _tape_of(x)
    out = f(value(x))
    if tape is None:
        return out
    xv = x.value
    return tape._record(out, (x,), lambda g: (df(g, xv, out),))


def add(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av + bv
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape._record(out, (_parent(a), _parent(b)),
                        lambda g: (_unbroadcast(g, sa) if isinstance(a, Var) else None,
                                   _unbroadcast(g, sb) if isinstance(b, Var) else None))


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av - bv
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape._record(out, (_parent(a), _parent(b)),
                        lambda g: (_unbroadcast(g, sa) if isinstance(a, Var) else None,
                                   -_unbroadcast(g, sb) if isinstance(b, Var) else None))


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av * bv
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape._record(
        out, (_parent(a), _parent(b)),
        lambda g: (_unbroadcast(g * bv, sa) if isinstance(a, Var) else None,
                   _unbroadcast(g * av, sb) if isinstance(b, Var) else None))


def neg(x):
    return _elementwise(np.negative, lambda g, xv, out: -g, x)


def exp(x):
    return _elementwise(np.exp, lambda g, xv, out: g * out, x)


def log(x):
    return _elementwise(np.log, lambda g, xv, out: g / xv, x)


def tanh(x):
    return _elementwise(np.tanh, lambda g, xv, out: g * (1.0 - out * out), x)


def relu(x):
    return _elementwise(lambda v: np.maximum(v, 0.0), lambda g, xv, out: g * (xv > 0), x)


def matmul(a, b):
    """``a[..., n] @ b[n, m]``; ``b`` must be 2-D."""
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if np.ndim(bv) != 2:
        raise ValueError("matmul right operand must be 2-D")
    if np.shape(av)[-1] != bv.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {np.shape(av)} @ {bv.shape}")
    out = av @ bv
    if tape is None:
        return out

    def vjp(g):
        ga = g @ bv.T if isinstance(a, Var) else None
        gb = None
        if isinstance(b, Var):
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return tape._record(out, (_parent(a), _parent(b)), vjp)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    tape = _tape_of(x)
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    if tape is None:
        return out
    shape = xv.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return tape._record(out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    xv = value(x)
    n = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(xs: Sequence, axis=-1):
    tape = _tape_of(*xs)
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._record(out, tuple(_parent(x) for x in xs), vjp)


def index(x, key):
    """``x[key]`` for basic slices or integer gathers; repeated indices accumulate."""
    tape = _tape_of(x)
    xv = value(x)
    out = xv[key]
    if tape is None:
        return out

    basic = all(k is Ellipsis or isinstance(k, (slice, int))
                for k in (key if isinstance(key, tuple) else (key,)))

    def vjp(g):
        full = np.zeros_like(xv)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return tape._record(out, (x,), vjp)


def reshape(x, shape):
    tape = _tape_of(x)
    xv = value(x)
    out = xv.reshape(shape)
    if tape is None:
        return out
    return tape._record(out, (x,), lambda g: (g.reshape(xv.shape),))


def broadcast_to(x, shape):
    tape = _tape_of(x)
    xv = value(x)
    out = np.broadcast_to(xv, shape)
    if tape is None:
        return out
    return tape._record(out, (x,), lambda g: (_unbroadcast(g, xv.shape),))
