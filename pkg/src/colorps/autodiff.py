"""Reverse-mode automatic differentiation on numpy arrays.

A `Tape` records every primitive applied to `Var` nodes (a Wengert list);
`Tape.backward` replays the list in reverse, accumulating vector-Jacobian
products into per-node adjoints.  Nodes hold whole arrays, so a single
recorded op can cover an entire pixel batch.

Every primitive in this module also accepts plain ndarrays and then simply
computes with numpy.  Model code written against these functions therefore
runs twice: once on `Var`s while optimizing, and once on raw arrays for
fast inference.
"""

from __future__ import annotations

import numpy as np

from .errors import OptimizerError, TraceError

__all__ = [
    "Tape",
    "Var",
    "ParamStore",
    "grad",
    "grad_wrt_input",
    "value_of",
]


def value_of(x):
    """Underlying ndarray of a Var, or the input itself."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    """Sum gradient `g` down to `shape` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """One node of a recorded computation."""

    __slots__ = ("value", "tape", "index")

    # Keep numpy from absorbing Var into object arrays; arithmetic with
    # ndarray on the left then defers to our __r*__ methods.
    __array_ufunc__ = None

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"

    # -- arithmetic ------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)


class Tape:
    """Recorded trace of one forward evaluation.

    `check_finite=True` validates every intermediate and raises a
    `TraceError` naming the offending primitive; it is enabled by the
    verification wrappers (`grad`, `grad_wrt_input`) and left off in the
    optimization hot path.
    """

    def __init__(self, dtype=np.float64, check_finite=False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self._edges = []  # per node: tuple of (parent_index, vjp)

    def var(self, value):
        """Register a leaf (an input or parameter)."""
        return self._record("leaf", np.asarray(value, dtype=self.dtype), ())

    def _record(self, op_name, value, edges):
        value = np.asarray(value)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise TraceError(op_name)
        node = Var(value, self, len(self._edges))
        self._edges.append(edges)
        return node

    def backward(self, root, seed=None):
        """Adjoints of every node w.r.t. a scalar `root`.

        Returns a list indexed by node `index`; unused nodes keep adjoint 0.
        A repeated call replays the same trace and yields identical values.
        """
        if root.tape is not self:
            raise ValueError("root does not belong to this tape")
        if seed is None:
            if root.value.size != 1:
                raise ValueError("backward without a seed requires a scalar root")
            seed = np.ones_like(root.value)
        adjoints = [None] * len(self._edges)
        owned = bytearray(len(self._edges))  # may we add into the buffer in place?
        adjoints[root.index] = np.asarray(seed, dtype=root.value.dtype)
        for index in range(root.index, -1, -1):
            g = adjoints[index]
            if g is None:
                continue
            for parent_index, vjp in self._edges[index]:
                contribution = vjp(g)
                held = adjoints[parent_index]
                if held is None:
                    adjoints[parent_index] = contribution
                elif owned[parent_index] and held.shape == np.shape(contribution):
                    held += contribution
                else:
                    adjoints[parent_index] = held + contribution
                    owned[parent_index] = 1
        return adjoints

    def adjoint(self, adjoints, node):
        """Adjoint of `node` from a `backward` result (0 where unused)."""
        g = adjoints[node.index]
        if g is None:
            return np.zeros_like(node.value)
        return np.reshape(g, node.value.shape) if g.shape != node.value.shape else g


def _find_tape(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _lift(x, tape):
    """Coerce a constant operand to the tape dtype (no node is created)."""
    return np.asarray(x, dtype=tape.dtype)


def _binary(op_name, fa, fb, fval, a, b):
    """Record a broadcasting binary primitive.

    `fval(av, bv)` computes the value; `fa`/`fb` map the output adjoint to
    each input's adjoint (before unbroadcasting).
    """
    tape = _find_tape(a, b)
    if tape is None:
        return fval(np.asarray(a), np.asarray(b))
    av = a.value if isinstance(a, Var) else _lift(a, tape)
    bv = b.value if isinstance(b, Var) else _lift(b, tape)
    with np.errstate(all="ignore"):  # the tape itself reports non-finite values
        out = fval(av, bv)
    edges = []
    if isinstance(a, Var):
        edges.append((a.index, lambda g, av=av, bv=bv: _unbroadcast(fa(g, av, bv), av.shape)))
    if isinstance(b, Var):
        edges.append((b.index, lambda g, av=av, bv=bv: _unbroadcast(fb(g, av, bv), bv.shape)))
    return tape._record(op_name, out, tuple(edges))


def _unary(op_name, fval, fgrad, x):
    if not isinstance(x, Var):
        return fval(np.asarray(x))
    xv = x.value
    with np.errstate(all="ignore"):  # the tape itself reports non-finite values
        out = fval(xv)
    return x.tape._record(op_name, out, ((x.index, lambda g: fgrad(g, xv, out)),))


# -- arithmetic ----------------------------------------------------------

def add(a, b):
    return _binary("add", lambda g, av, bv: g, lambda g, av, bv: g, np.add, a, b)


def sub(a, b):
    return _binary("sub", lambda g, av, bv: g, lambda g, av, bv: -g, np.subtract, a, b)


def mul(a, b):
    return _binary("mul", lambda g, av, bv: g * bv, lambda g, av, bv: g * av, np.multiply, a, b)


def div(a, b):
    return _binary(
        "div",
        lambda g, av, bv: g / bv,
        lambda g, av, bv: -g * av / (bv * bv),
        np.divide,
        a,
        b,
    )


def neg(x):
    return _unary("neg", np.negative, lambda g, xv, out: -g, x)


def power(x, exponent):
    """x ** p for a constant (non-Var) exponent."""
    if isinstance(exponent, Var):
        raise TypeError("power supports only constant exponents")
    p = float(exponent)
    return _unary(
        "power",
        lambda xv: xv**p,
        lambda g, xv, out: g * p * xv ** (p - 1.0),
        x,
    )


def sqrt(x):
    return _unary("sqrt", np.sqrt, lambda g, xv, out: g * (0.5 / out), x)


def exp(x):
    return _unary("exp", np.exp, lambda g, xv, out: g * out, x)


def log(x):
    return _unary("log", np.log, lambda g, xv, out: g / xv, x)


def sin(x):
    return _unary("sin", np.sin, lambda g, xv, out: g * np.cos(xv), x)


def cos(x):
    return _unary("cos", np.cos, lambda g, xv, out: -g * np.sin(xv), x)


def tanh(x):
    return _unary("tanh", np.tanh, lambda g, xv, out: g * (1.0 - out * out), x)


def absolute(x):
    """|x| with subgradient 0 at x = 0."""
    return _unary("abs", np.abs, lambda g, xv, out: g * np.sign(xv), x)


def atan2(y, x):
    return _binary(
        "atan2",
        lambda g, yv, xv: g * xv / (xv * xv + yv * yv),
        lambda g, yv, xv: -g * yv / (xv * xv + yv * yv),
        np.arctan2,
        y,
        x,
    )


def relu(x):
    """max(x, 0); the subgradient at exactly 0 is 0."""
    return _unary(
        "relu",
        lambda xv: np.maximum(xv, 0.0),
        lambda g, xv, out: g * (xv > 0.0),
        x,
    )


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    return _binary(
        "maximum",
        lambda g, av, bv: g * (av >= bv),
        lambda g, av, bv: g * (av < bv),
        np.maximum,
        a,
        b,
    )


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    lo = float(lo)
    hi = float(hi)
    return _unary(
        "clamp",
        lambda xv: np.clip(xv, lo, hi),
        lambda g, xv, out: g * ((xv > lo) & (xv < hi)),
        x,
    )


def clamp_floor_passthrough(x, floor):
    """max(x, floor) with a straight-through (identity) gradient.

    Used for the depth positivity floor: the clamp keeps the renderer in
    its domain while the optimizer still feels the pull back above floor.
    """
    floor = float(floor)
    return _unary(
        "clamp_floor_passthrough",
        lambda xv: np.maximum(xv, floor),
        lambda g, xv, out: g,
        x,
    )


def softplus(x):
    """log(1 + exp(x)), computed stably; derivative is the sigmoid."""

    def _sigmoid(xv):
        out = np.empty_like(xv)
        pos = xv >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
        e = np.exp(xv[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _unary(
        "softplus",
        lambda xv: np.logaddexp(0.0, xv),
        lambda g, xv, out: g * _sigmoid(xv),
        x,
    )


def where(condition, a, b):
    """Select with a constant boolean mask (the mask is never a Var)."""
    condition = np.asarray(value_of(condition), dtype=bool)
    return _binary(
        "where",
        lambda g, av, bv: g * condition,
        lambda g, av, bv: g * ~condition,
        lambda av, bv: np.where(condition, av, bv),
        a,
        b,
    )


# -- structural ----------------------------------------------------------

def matmul(a, b):
    return _binary(
        "matmul",
        lambda g, av, bv: g @ np.swapaxes(bv, -1, -2),
        lambda g, av, bv: np.swapaxes(av, -1, -2) @ g,
        np.matmul,
        a,
        b,
    )


def _scatter_rows(g, index, shape, dtype):
    """Adjoint of row gathering: sum `g` back into a zeroed array of `shape`.

    Uses bincount per feature column for integer-array indices (much faster
    than np.add.at and still a deterministic, order-independent sum).
    """
    if isinstance(index, np.ndarray) and index.dtype.kind in "iu" and len(shape) == 2:
        flat_index = index.ravel()
        flat_g = np.ascontiguousarray(g).reshape(-1, shape[1])
        full = np.empty(shape, dtype=dtype)
        for c in range(shape[1]):
            full[:, c] = np.bincount(flat_index, weights=flat_g[:, c], minlength=shape[0])
        return full
    full = np.zeros(shape, dtype=dtype)
    np.add.at(full, index, g)
    return full


def take(x, index):
    """x[index] for a constant integer/slice index; adjoint scatter-adds."""
    if not isinstance(x, Var):
        return np.asarray(x)[index]
    xv = x.value
    out = xv[index]

    def vjp(g, index=index, shape=xv.shape, dtype=xv.dtype):
        return _scatter_rows(g, index, shape, dtype)

    return x.tape._record("take", out, ((x.index, vjp),))


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    xv = x.value
    return x.tape._record(
        "reshape",
        xv.reshape(shape),
        ((x.index, lambda g, s=xv.shape: g.reshape(s)),),
    )


def concat_cols(parts):
    """Concatenate (N, Ki) blocks along axis 1."""
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate([np.asarray(p) for p in parts], axis=1)
    tape = _find_tape(*parts)
    values = [p.value if isinstance(p, Var) else _lift(p, tape) for p in parts]
    out = np.concatenate(values, axis=1)
    edges = []
    offset = 0
    for part, v in zip(parts, values):
        width = v.shape[1]
        if isinstance(part, Var):
            edges.append((part.index, lambda g, o=offset, w=width: g[:, o : o + w]))
        offset += width
    return tape._record("concat_cols", out, tuple(edges))


def column_stack(parts):
    """Stack (N,) vectors into an (N, K) matrix."""
    if not any(isinstance(p, Var) for p in parts):
        return np.stack([np.asarray(p) for p in parts], axis=1)
    tape = _find_tape(*parts)
    values = [p.value if isinstance(p, Var) else _lift(p, tape) for p in parts]
    out = np.stack(values, axis=1)
    edges = []
    for i, part in enumerate(parts):
        if isinstance(part, Var):
            edges.append((part.index, lambda g, i=i: g[:, i]))
    return tape._record("column_stack", out, tuple(edges))


def total(x):
    """Sum of all elements (scalar)."""
    return _unary(
        "sum",
        lambda xv: np.sum(xv),
        lambda g, xv, out: np.broadcast_to(g, xv.shape).copy(),
        x,
    )


def mean(x):
    n = value_of(x).size
    return total(x) / float(n)


# -- parameter store -----------------------------------------------------

class ParamStore:
    """Named parameter arrays, grouped by dotted prefixes.

    Insertion order is part of the contract: optimizers and checkpoints
    iterate in a stable order, keeping runs reproducible.
    """

    def __init__(self, arrays=None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self._arrays[name] = np.asarray(arr)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        self._arrays[name] = np.asarray(value)

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def update(self, other):
        for name, arr in other.items():
            self._arrays[name] = np.asarray(arr)

    def group(self, prefix):
        """Sub-store of every array whose name starts with `prefix.`."""
        dot = prefix if prefix.endswith(".") else prefix + "."
        return ParamStore({k: v for k, v in self._arrays.items() if k.startswith(dot)})

    def total_count(self):
        return int(sum(a.size for a in self._arrays.values()))

    def astype(self, dtype):
        return ParamStore({k: v.astype(dtype) for k, v in self._arrays.items()})

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def check_finite(self):
        for name, arr in self._arrays.items():
            if not np.all(np.isfinite(arr)):
                raise OptimizerError(f"parameter '{name}' contains non-finite values")

    def as_vars(self, tape):
        """Register every array as a leaf on `tape`; returns {name: Var}."""
        return {name: tape.var(arr) for name, arr in self._arrays.items()}


# -- verification wrappers ------------------------------------------------

def grad(fn, params, dtype=np.float64):
    """Value and parameter adjoints of a scalar-valued builder.

    `fn(pvars)` receives `{name: Var}` and must return a scalar Var built
    from the primitives in this module.  Finiteness checking is on, so a
    non-finite intermediate raises `TraceError` naming the primitive.
    """
    tape = Tape(dtype=dtype, check_finite=True)
    pvars = params.as_vars(tape)
    out = fn(pvars)
    adjoints = tape.backward(out)
    grads = ParamStore({name: tape.adjoint(adjoints, v) for name, v in pvars.items()})
    return float(out.value), grads


def grad_wrt_input(fn, xy, dtype=np.float64):
    """Gradient of a scalar function of a 2-vector input.

    `fn(u, v)` receives two scalar Vars and returns a scalar Var.
    """
    tape = Tape(dtype=dtype, check_finite=True)
    u = tape.var(xy[0])
    v = tape.var(xy[1])
    out = fn(u, v)
    adjoints = tape.backward(out)
    return np.array(
        [float(tape.adjoint(adjoints, u)), float(tape.adjoint(adjoints, v))]
    )
