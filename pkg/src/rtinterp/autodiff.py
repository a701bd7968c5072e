"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every primitive accepts plain numpy values or :class:`Var` objects. When no
argument is a ``Var`` the primitive simply returns the numpy result, so the
same model code runs untracked for inference and tracked for training::

    tape = Tape()
    w = tape.var(np.array([1.0, 2.0]))
    loss = ad.sum(ad.tanh(w) * 3.0)
    (gw,) = backward(loss, [w])

Nodes are appended to the tape in creation order, which is a topological
order of the computation graph; :func:`backward` walks it in reverse.
"""
from __future__ import annotations

import numpy as np

from .core import NumericalError, RtiError, ValidationError


class ShapeMismatch(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonScalarOutput(RtiError, ValueError):
    pass


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value, name: str | None = None) -> "Var":
        """Register a leaf variable."""
        return Var(np.array(value, dtype=float), self, (), name=name)

    def __len__(self):
        return len(self.nodes)


class Var:
    __slots__ = ("value", "tape", "index", "parents", "name")
    __array_priority__ = 1000

    def __init__(self, value, tape: Tape, parents, name=None):
        self.value = value
        self.tape = tape
        # parents: tuple of (Var, pullback) where pullback maps the output
        # adjoint to this parent's adjoint contribution
        self.parents = parents
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _node(out, args, pullbacks) -> Var | np.ndarray:
    tape = _tape_of(args)
    if tape is None:
        return out
    parents = tuple((a, pb) for a, pb in zip(args, pullbacks) if isinstance(a, Var))
    return Var(np.asarray(out, dtype=float), tape, parents)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return np.shape(value(x))


# elementwise ------------------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _node(av + bv, (a, b), (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _node(av - bv, (a, b), (lambda g: _unbroadcast(g, sa), lambda g: -_unbroadcast(g, sb)))


def mul(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _node(
        av * bv,
        (a, b),
        (lambda g: _unbroadcast(g * bv, sa), lambda g: _unbroadcast(g * av, sb)),
    )


def reciprocal(a):
    av = value(a)
    out = 1.0 / av
    return _node(out, (a,), (lambda g: -g * out * out,))


def div(a, b):
    return mul(a, reciprocal(b))


def neg(a):
    return _node(-value(a), (a,), (lambda g: -g,))


def exp(a):
    out = np.exp(value(a))
    return _node(out, (a,), (lambda g: g * out,))


def tanh(a):
    out = np.tanh(value(a))
    return _node(out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a):
    av = value(a)
    # split by sign so large |x| never overflows exp
    z = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _node(out, (a,), (lambda g: g * out * (1.0 - out),))


def select(cond, a, b):
    """Piecewise choice: ``a`` where ``cond`` holds, else ``b``.

    ``cond`` is a constant boolean array; the adjoint flows only into the
    branch that was taken.
    """
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _node(
        np.where(cond, av, bv),
        (a, b),
        (lambda g: _unbroadcast(np.where(cond, g, 0.0), sa), lambda g: _unbroadcast(np.where(cond, 0.0, g), sb)),
    )


# reductions and structure ----------------------------------------------------


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    shape = np.shape(av)

    def pb(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _node(np.sum(av, axis=axis), (a,), (pb,))


def mean(a, axis=None):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def getitem(a, idx):
    av = value(a)
    shape = av.shape

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def pb(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return out

    return _node(av[idx], (a,), (pb,))


def concat(items, axis=-1):
    vals = [np.asarray(value(x), dtype=float) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    pbs = []
    for i in range(len(vals)):
        lo, hi = bounds[i], bounds[i + 1]
        pbs.append(lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis))
    return _node(out, tuple(items), tuple(pbs))


def stack(items, axis=-1):
    vals = [np.asarray(value(x), dtype=float) for x in items]
    out = np.stack(vals, axis=axis)
    pbs = tuple((lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(vals)))
    return _node(out, tuple(items), pbs)


# linear algebra ----------------------------------------------------------------


def _parse_einsum(subscripts: str, n_ops: int):
    if "..." in subscripts:
        raise ValidationError("ellipsis is not supported in tracked einsum")
    lhs, out = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n_ops:
        raise ShapeMismatch("einsum operand count does not match subscripts")
    for s in ins:
        if len(set(s)) != len(s):
            raise ValidationError("repeated indices within one operand are not supported")
    return ins, out


def einsum(subscripts: str, *operands):
    """Tracked ``np.einsum`` with explicit output subscripts."""
    ins, out_sub = _parse_einsum(subscripts, len(operands))
    vals = [value(o) for o in operands]
    out = np.einsum(subscripts, *vals, optimize=False)

    def make_pb(i):
        target = ins[i]
        others = [s for j, s in enumerate(ins) if j != i]
        other_vals = [v for j, v in enumerate(vals) if j != i]
        present = set(out_sub).union(*others) if others else set(out_sub)
        kept = "".join(c for c in target if c in present)
        shape_i = np.shape(vals[i])

        def pb(g):
            spec = ",".join([out_sub] + others) + "->" + kept
            r = np.einsum(spec, g, *other_vals, optimize=False)
            if kept != target:
                # index summed only inside this operand: broadcast back
                exp_shape = [shape_i[k] if c in present else 1 for k, c in enumerate(target)]
                r = np.broadcast_to(r.reshape(exp_shape), shape_i).copy()
            return r

        return pb

    return _node(out, operands, tuple(make_pb(i) for i in range(len(operands))))


def matmul(a, b):
    av, bv = value(a), value(b)
    if np.ndim(av) < 2 or np.ndim(bv) < 2:
        raise ShapeMismatch("matmul needs operands with at least two dimensions; use matvec or dot")
    sa, sb = np.shape(av), np.shape(bv)
    return _node(
        av @ bv,
        (a, b),
        (
            lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), sa),
            lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, sb),
        ),
    )


matmat = matmul


def matvec(m, x):
    """Batched matrix-vector product over the trailing axes."""
    mv, xv = value(m), value(x)
    if np.shape(mv)[-1] != np.shape(xv)[-1]:
        raise ShapeMismatch(f"matvec: {np.shape(mv)} x {np.shape(xv)}")
    sm, sx = np.shape(mv), np.shape(xv)
    out = (mv @ xv[..., None])[..., 0]
    return _node(
        out,
        (m, x),
        (
            lambda g: _unbroadcast(g[..., :, None] * xv[..., None, :], sm),
            lambda g: _unbroadcast((np.swapaxes(mv, -1, -2) @ g[..., None])[..., 0], sx),
        ),
    )


def dot(a, b):
    """Inner product over the trailing axis (batched)."""
    av, bv = value(a), value(b)
    if np.shape(av)[-1] != np.shape(bv)[-1]:
        raise ShapeMismatch(f"dot: {np.shape(av)} . {np.shape(bv)}")
    sa, sb = np.shape(av), np.shape(bv)
    return _node(
        np.sum(av * bv, axis=-1),
        (a, b),
        (lambda g: _unbroadcast(g[..., None] * bv, sa), lambda g: _unbroadcast(g[..., None] * av, sb)),
    )


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def _cho_solve(chol, b):
    # b has shape (..., m); two batched triangular solves
    y = np.linalg.solve(chol, b[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]


def solve_spd(a, b):
    """Solve ``a x = b`` for symmetric positive-definite ``a`` (batched over leading axes).

    The adjoint reuses the Cholesky factor: ``gb = a^{-1} g`` and
    ``ga = -gb x^T``.
    """
    av, bv = value(a), value(b)
    if np.shape(av)[-1] != np.shape(bv)[-1] or np.shape(av)[-1] != np.shape(av)[-2]:
        raise ShapeMismatch(f"solve_spd: {np.shape(av)} \\ {np.shape(bv)}")
    chol = _cholesky(av)
    x = _cho_solve(chol, np.broadcast_to(bv, np.broadcast_shapes(np.shape(bv), np.shape(av)[:-1])))
    sa, sb = np.shape(av), np.shape(bv)
    cache = {}

    def gb_of(g):
        if "gb" not in cache:
            cache["gb"] = _cho_solve(chol, g)
        return cache["gb"]

    return _node(
        x,
        (a, b),
        (
            lambda g: _unbroadcast(-gb_of(g)[..., :, None] * x[..., None, :], sa),
            lambda g: _unbroadcast(gb_of(g), sb),
        ),
    )


# driver ------------------------------------------------------------------------


def backward(output, wrt) -> list[np.ndarray]:
    """Reverse accumulation of d(output)/d(leaf) for each leaf in ``wrt``.

    Leaves the output does not depend on get a zero gradient.
    """
    wrt = list(wrt)
    if not isinstance(output, Var):
        return [np.zeros_like(value(w)) for w in wrt]
    if output.value.size != 1:
        raise NonScalarOutput(f"output has shape {output.value.shape}")
    nodes = output.tape.nodes
    grads: list = [None] * (output.index + 1)
    grads[output.index] = np.ones_like(output.value)
    for i in range(output.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        for parent, pb in node.parents:
            c = pb(g)
            j = parent.index
            grads[j] = c if grads[j] is None else grads[j] + c
        if node.parents:
            grads[i] = None  # free intermediate adjoints as we go
    out = []
    for w in wrt:
        g = grads[w.index] if w.index < len(grads) else None
        out.append(np.zeros_like(w.value) if g is None else np.asarray(g).reshape(w.value.shape))
    return out
