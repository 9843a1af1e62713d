"""Reverse-mode gradients over numpy arrays.

Every numerical routine in the package is written against the small set of
functions below (``sqrt``, ``log``, ``where``, ``gather`` ...).  Called with
plain arrays they are thin wrappers over numpy; called with :class:`Var`
they additionally record a node so that :func:`backpropagate` can pull
gradients back to the parameters.  Because both paths run the very same
numpy calls in the same order, taped and untaped forward values agree
bit for bit.

Nodes carry an increasing id, so recording order is a valid topological
order of the graph.  Data-dependent branches (spline buckets, mixture
component selection) are handled by computing indices from ``.value`` and
treating them as constants.
"""
from __future__ import annotations

import itertools
import warnings
from typing import Callable, Mapping

import numpy as np
from scipy import special

__all__ = [
    "Var", "ParameterStore", "DomainError", "NonFiniteGradientError",
    "record", "backpropagate", "finite_difference_check", "value_of",
    "sqrt", "log", "log1p", "exp", "absolute", "lgamma", "where", "gather",
    "concat", "flip", "cumsum", "vsum", "vmean", "stack",
]

_ids = itertools.count()


class DomainError(ValueError):
    """Raised when a primitive is evaluated outside its domain."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class NonFiniteGradientError(FloatingPointError):
    """A backward pass produced inf/nan; ``node_id``/``op`` name the culprit."""

    def __init__(self, node_id, op):
        super().__init__(f"non-finite gradient at node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    """A recorded array value.

    ``parents`` are the input nodes and ``vjp`` maps the output cotangent to
    one cotangent per parent (``None`` where a parent gets nothing).
    """

    __slots__ = ("value", "parents", "vjp", "op", "id", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, parents=(), vjp=None, op="const", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name
        self.id = next(_ids)

    def __repr__(self):
        label = self.name or self.op
        return f"Var<{label}#{self.id}>(shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add, "add",
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, "sub",
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, "sub",
                       lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, np.multiply, "mul",
                       lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, "div",
                       lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _binary(other, self, np.divide, "div",
                       lambda g, a, b: (g / b, -g * a / (b * b)))

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        x = self.value
        return Var(x ** p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __getitem__(self, idx):
        x = self.value
        shape = x.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Var(x[idx], (self,), vjp, "getitem")

    def reshape(self, *shape):
        old = self.value.shape
        return Var(self.value.reshape(*shape), (self,),
                   lambda g: (g.reshape(old),), "reshape")

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)


def value_of(x):
    """The numeric value of ``x`` whether or not it is recorded."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _binary(a, b, fn, op, rule):
    av, bv = value_of(a), value_of(b)
    out = fn(av, bv)
    parents = (a if isinstance(a, Var) else None,
               b if isinstance(b, Var) else None)

    def vjp(g):
        ga, gb = rule(g, av, bv)
        return (None if parents[0] is None else _unbroadcast(np.asarray(ga), av.shape),
                None if parents[1] is None else _unbroadcast(np.asarray(gb), bv.shape))

    return _node(out, parents, vjp, op)


def _node(out, parents, vjp, op):
    if all(p is None for p in parents):
        return out
    return Var(out, tuple(Var(0.0) if p is None else p for p in parents), vjp, op)


def _matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.outer(g, bv)
        if av.ndim == 1:
            gb = np.outer(av, g)
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(out, (a if isinstance(a, Var) else None,
                       b if isinstance(b, Var) else None), vjp, "matmul")


# primitives -------------------------------------------------------------

def sqrt(x):
    v = np.sqrt(value_of(x))
    if not isinstance(x, Var):
        return v
    return Var(v, (x,), lambda g: (g * 0.5 / v,), "sqrt")


def log(x):
    xv = value_of(x)
    if np.any(xv <= 0):
        node_id = x.id if isinstance(x, Var) else None
        raise DomainError(f"log of non-positive value (node {node_id})", node_id)
    if not isinstance(x, Var):
        return np.log(xv)
    return Var(np.log(xv), (x,), lambda g: (g / xv,), "log")


def log1p(x):
    xv = value_of(x)
    if np.any(xv <= -1):
        node_id = x.id if isinstance(x, Var) else None
        raise DomainError(f"log1p of value <= -1 (node {node_id})", node_id)
    if not isinstance(x, Var):
        return np.log1p(xv)
    return Var(np.log1p(xv), (x,), lambda g: (g / (1.0 + xv),), "log1p")


def exp(x):
    v = np.exp(value_of(x))
    if not isinstance(x, Var):
        return v
    return Var(v, (x,), lambda g: (g * v,), "exp")


def absolute(x):
    xv = value_of(x)
    if not isinstance(x, Var):
        return np.abs(xv)
    return Var(np.abs(xv), (x,), lambda g: (g * np.sign(xv),), "abs")


def lgamma(x):
    xv = value_of(x)
    if not isinstance(x, Var):
        return special.gammaln(xv)
    return Var(special.gammaln(xv), (x,), lambda g: (g * special.digamma(xv),), "lgamma")


def where(cond, a, b):
    """Elementwise select; ``cond`` is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    parents = (a if isinstance(a, Var) else None, b if isinstance(b, Var) else None)

    def vjp(g):
        return (None if parents[0] is None else _unbroadcast(np.where(cond, g, 0.0), av.shape),
                None if parents[1] is None else _unbroadcast(np.where(cond, 0.0, g), bv.shape))

    return _node(out, parents, vjp, "where")


def gather(x, idx):
    """``x[..., idx[...]]`` along the last axis, broadcasting leading axes."""
    xv = value_of(x)
    idx = np.asarray(idx)
    lead = np.broadcast_shapes(xv.shape[:-1], idx.shape)
    full_shape = lead + xv.shape[-1:]
    xb = np.broadcast_to(xv, full_shape)
    ib = np.broadcast_to(idx, lead)[..., None]
    out = np.take_along_axis(xb, ib, axis=-1)[..., 0]
    if not isinstance(x, Var):
        return out

    def vjp(g):
        full = np.zeros(full_shape)
        np.put_along_axis(full, ib, g[..., None], axis=-1)
        return (_unbroadcast(full, xv.shape),)

    return Var(out, (x,), vjp, "gather")


def concat(parts, axis=-1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not any(isinstance(p, Var) for p in parts):
        return out
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    parents = tuple(p if isinstance(p, Var) else Var(v) for p, v in zip(parts, vals))

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Var(out, parents, vjp, "concat")


def stack(parts, axis=-1):
    def expand(p):
        shape = np.expand_dims(value_of(p), axis).shape
        return p.reshape(shape) if isinstance(p, Var) else value_of(p).reshape(shape)

    return concat([expand(p) for p in parts], axis=axis)


def flip(x, axis=-1):
    xv = value_of(x)
    if not isinstance(x, Var):
        return np.flip(xv, axis=axis)
    return Var(np.flip(xv, axis=axis), (x,), lambda g: (np.flip(g, axis=axis),), "flip")


def cumsum(x, axis=-1):
    xv = value_of(x)
    if not isinstance(x, Var):
        return np.cumsum(xv, axis=axis)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return Var(np.cumsum(xv, axis=axis), (x,), vjp, "cumsum")


def vsum(x, axis=None, keepdims=False):
    xv = value_of(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    if not isinstance(x, Var):
        return out
    shape = xv.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(out, (x,), vjp, "sum")


def vmean(x, axis=None, keepdims=False):
    xv = value_of(x)
    n = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return vsum(x, axis=axis, keepdims=keepdims) / float(n)


# parameters and the backward pass --------------------------------------

class ParameterStore:
    """Named float64 arrays whose shapes are fixed at construction."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays = {}
        for name, arr in arrays.items():
            if name in self._arrays:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._arrays[name] = np.array(arr, dtype=np.float64)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self._arrays[name].shape:
            raise ValueError(f"shape of {name!r} is {self._arrays[name].shape}, got {value.shape}")
        self._arrays[name] = value.copy()

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __contains__(self, name):
        return name in self._arrays

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    @property
    def size(self):
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self):
        return ParameterStore(self._arrays)

    def arrays(self):
        """A shallow dict view; treat as read-only."""
        return dict(self._arrays)

    def leaves(self):
        return {k: Var(v, op="param", name=k) for k, v in self._arrays.items()}


def record(fn: Callable, store: ParameterStore):
    """Evaluate ``fn`` on fresh leaves of ``store``; returns ``(root, leaves)``."""
    leaves = store.leaves()
    return fn(leaves), leaves


def _topological(root):
    seen = {}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack_.extend(node.parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def backpropagate(root, wrt: Mapping[str, Var]):
    """Gradients of a scalar ``root`` with respect to the leaves in ``wrt``.

    Leaves that do not influence ``root`` get zeros.  Raises
    :class:`NonFiniteGradientError` naming the first node (walking backwards)
    whose incoming gradient is not finite.
    """
    if not isinstance(root, Var):
        return {k: np.zeros_like(v.value) for k, v in wrt.items()}
    if root.value.size != 1:
        raise ValueError("backpropagate needs a scalar root")
    grads = {root.id: np.ones_like(root.value)}
    for node in _topological(root):
        g = grads.get(node.id)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(node.id, node.op)
        if node.vjp is None:
            continue
        del grads[node.id]
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or parent.op == "const":
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {k: np.asarray(grads.get(v.id, np.zeros_like(v.value)), dtype=np.float64).reshape(v.value.shape)
            for k, v in wrt.items()}


def finite_difference_check(f, store: ParameterStore, h=1e-5, names=None):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a name->array (or name->Var) mapping to a scalar.  The error of
    each entry is ``|analytic - fd| / max(1, |analytic|)``.  Entries where a
    perturbed evaluation is not finite are skipped and counted in a warning.
    """
    root, leaves = record(f, store)
    analytic = backpropagate(root, leaves)
    base = store.arrays()
    worst = 0.0
    skipped = 0
    for name in names or store.names():
        arr = base[name]
        for i in np.ndindex(arr.shape):
            vals = dict(base)
            plus = arr.copy()
            plus[i] += h
            vals[name] = plus
            fp = float(value_of(f(vals)))
            minus = arr.copy()
            minus[i] -= h
            vals[name] = minus
            fm = float(value_of(f(vals)))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                skipped += 1
                continue
            fd = (fp - fm) / (2.0 * h)
            a = analytic[name][i]
            worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    if skipped:
        warnings.warn(f"{skipped} parameter entries skipped: non-finite objective",
                      RuntimeWarning, stacklevel=2)
    return worst
