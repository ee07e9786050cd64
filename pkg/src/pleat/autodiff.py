"""Reverse-mode automatic differentiation over a recorded tape.

Primal values are numpy arrays: scalars, single 3-vectors, or batched rows
such as ``(n, 3)`` position stacks and ``(n, d)`` feature matrices.  Every
operation accepts a mix of :class:`Var` and plain array/scalar operands; if
no operand is a ``Var`` the operation short-circuits to plain numpy, which
gives a zero-overhead no-gradient evaluation path.

A :class:`Tape` owns its recorded variables and is not shared between
threads.  ``backward`` walks the tape once in reverse creation order, so
gradient accumulation is deterministic.
"""

from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "square",
    "sqrt",
    "norm",
    "dot",
    "cross",
    "acos",
    "min0",
    "max0",
    "relu",
    "sum",
    "matmul",
    "gather",
    "scatter_add",
    "concat",
    "reshape",
    "layer_norm",
    "detach",
    "lift",
    "backward",
    "PRIMITIVES",
]

# Names of every differentiable primitive; the test suite checks each one
# against finite differences.
PRIMITIVES = (
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "square",
    "sqrt",
    "norm",
    "dot",
    "cross",
    "acos",
    "min0",
    "max0",
    "sum",
    "matmul",
    "gather",
    "scatter_add",
    "concat",
    "reshape",
    "layer_norm",
)

DEFAULT_DTYPE = np.float64  # 32-bit is opt-in for performance experiments only

# acos derivative is evaluated at an argument clamped to +/-(1 - ACOS_EPS) to
# bound the gradient near the domain ends; the primal is clamped to [-1, 1].
ACOS_EPS = 1e-9
ACOS_DOMAIN_TOL = 1e-6
LAYER_NORM_EPS = 1e-8


class Tape:
    """
    Append-only record of operations for one reverse pass.

    Variables created through :meth:`var` (leaves) or by operations on them
    are stored in creation order, which is also a valid topological order:
    a single reversed sweep propagates gradients from a scalar output to
    every reachable input.
    """

    __slots__ = ("_vars",)

    def __init__(self) -> None:
        self._vars: list[Var] = []

    def var(self, value) -> "Var":
        """Create a leaf variable holding ``value`` (cast to float64)."""
        arr = np.asarray(value, dtype=DEFAULT_DTYPE)
        return self._record(arr, (), None)

    def _record(self, value, parents, vjp) -> "Var":
        v = Var(self, value, parents, vjp)
        self._vars.append(v)
        return v

    def __len__(self) -> int:
        return len(self._vars)

    def backward(self, output: "Var") -> None:
        """Seed ``output`` with gradient one and back-propagate to all leaves.

        ``output`` must be scalar.  Variables not reachable from it keep a
        zero (``None``-materialized) gradient.
        """
        if output.tape is not self:
            raise ValueError("output was recorded on a different tape")
        if np.ndim(output.value) != 0:
            raise ValueError(
                f"backward requires a scalar output, got shape {np.shape(output.value)}"
            )
        for v in self._vars:
            v.grad = None
        output.grad = np.float64(1.0)
        for v in reversed(self._vars):
            if v.grad is None or v._vjp is None:
                continue
            grads = v._vjp(v.grad)
            for parent, g in zip(v._parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


class Var:
    """Handle to a value recorded on a :class:`Tape`.

    Supports ``+ - * /`` and unary negation against other variables of the
    same tape or against plain constants.
    """

    __slots__ = ("tape", "value", "grad", "_parents", "_vjp")

    def __init__(self, tape, value, parents, vjp) -> None:
        self.tape = tape
        self.value = value
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={np.shape(self.value)})"

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


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=DEFAULT_DTYPE)


def _tape_of(*operands) -> Tape | None:
    tape = None
    for x in operands:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = np.ndim(g) - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


def _binary(a, b, fwd, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents = []
    vjps = []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(vjp_a(g, av, bv, out), np.shape(av)))
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(vjp_b(g, av, bv, out), np.shape(bv)))

    def vjp(g):
        return [f(g) for f in vjps]

    return tape._record(out, tuple(parents), vjp)


def _unary(a, fwd, vjp_fn):
    if not isinstance(a, Var):
        return fwd(_value(a))
    av = a.value
    out = fwd(av)
    return a.tape._record(out, (a,), lambda g: (vjp_fn(g, av, out),))


def lift(value, parents, vjp):
    """Record an externally computed ``value`` with a custom vector-Jacobian
    product.

    ``vjp(g)`` must return one gradient per entry of ``parents``.  Used for
    operations whose forward pass happens outside the tape, e.g. collider
    distance queries.
    """
    tape = _tape_of(*parents)
    if tape is None:
        return value
    return tape._record(value, tuple(parents), vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(
        a, b, lambda x, y: x * y, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x
    )


def div(a, b):
    bv = _value(b)
    if np.any(bv == 0.0):
        raise ZeroDivisionError("division by zero on the tape")
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * o / y,
    )


def neg(a):
    return _unary(a, lambda x: -x, lambda g, x, o: -g)


def scale(a, c):
    """Multiply by a plain scalar constant ``c``."""
    c = float(c)
    return _unary(a, lambda x: x * c, lambda g, x, o: g * c)


def square(a):
    return _unary(a, lambda x: x * x, lambda g, x, o: 2.0 * g * x)


def sqrt(a):
    def vjp(g, x, o):
        safe = np.where(o > 0.0, o, 1.0)
        out = g / (2.0 * safe)
        return np.where(o > 0.0, out, 0.0)

    return _unary(a, np.sqrt, vjp)


def norm(a):
    """Euclidean norm along the last axis; gradient is zero at the origin."""

    def vjp(g, x, o):
        zero = o == 0.0
        if np.any(zero):
            warnings.warn(
                "norm gradient requested at a zero vector; returning zero",
                RuntimeWarning,
                stacklevel=2,
            )
        safe = np.where(zero, 1.0, o)
        return (g / safe * ~zero)[..., None] * x

    return _unary(a, lambda x: np.linalg.norm(x, axis=-1), vjp)


def dot(a, b):
    return _binary(
        a,
        b,
        lambda x, y: (x * y).sum(axis=-1),
        lambda g, x, y, o: g[..., None] * y,
        lambda g, x, y, o: g[..., None] * x,
    )


def cross(a, b):
    return _binary(
        a,
        b,
        lambda x, y: np.cross(x, y),
        lambda g, x, y, o: np.cross(y, g),
        lambda g, x, y, o: np.cross(g, x),
    )


def acos(a):
    av = _value(a)
    if np.any(np.abs(av) > 1.0 + ACOS_DOMAIN_TOL):
        raise ValueError("acos argument outside [-1, 1] beyond the clamping window")

    def vjp(g, x, o):
        xc = np.clip(x, -1.0 + ACOS_EPS, 1.0 - ACOS_EPS)
        return -g / np.sqrt(1.0 - xc * xc)

    return _unary(a, lambda x: np.arccos(np.clip(x, -1.0, 1.0)), vjp)


def min0(a):
    """min(x, 0) with derivative 0 at x = 0 (inactive constraints stay force-free)."""
    return _unary(a, lambda x: np.minimum(x, 0.0), lambda g, x, o: g * (x < 0.0))


def max0(a):
    """max(x, 0) with derivative 0 at x = 0."""
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, x, o: g * (x > 0.0))


relu = max0


def sum(a):  # noqa: A001 - mirrors numpy's module-level name
    """Full reduction to a scalar."""

    def vjp(g, x, o):
        return np.broadcast_to(np.asarray(g), np.shape(x)).copy()

    return _unary(a, np.sum, vjp)


def matmul(a, b):
    return _binary(
        a,
        b,
        lambda x, y: x @ y,
        lambda g, x, y, o: g @ y.T,
        lambda g, x, y, o: x.T @ g,
    )


def gather(a, index):
    """Select rows ``a[index]``; the adjoint scatter-adds in index order."""
    index = np.asarray(index)

    def vjp(g, x, o):
        out = np.zeros_like(x)
        np.add.at(out, index, g)
        return out

    return _unary(a, lambda x: x[index], vjp)


def scatter_add(a, index, size):
    """Accumulate rows of ``a`` into ``size`` output rows at ``index``."""
    index = np.asarray(index)

    def fwd(x):
        out = np.zeros((size,) + x.shape[1:], dtype=x.dtype)
        np.add.at(out, index, x)
        return out

    return _unary(a, fwd, lambda g, x, o: g[index])


def concat(parts):
    """Concatenate along the last axis."""
    tape = _tape_of(*parts)
    values = [_value(p) for p in parts]
    out = np.concatenate(values, axis=-1)
    if tape is None:
        return out
    widths = [v.shape[-1] for v in values]
    offsets = np.cumsum([0] + widths)
    parents = []
    slots = []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            parents.append(p)
            slots.append(i)

    def vjp(g):
        return [g[..., offsets[i] : offsets[i + 1]] for i in slots]

    return tape._record(out, tuple(parents), vjp)


def layer_norm(a, gamma, beta):
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    tape = _tape_of(a, gamma, beta)
    x, gv, bv = _value(a), _value(gamma), _value(beta)
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    y = xc * inv
    out = y * gv + bv
    if tape is None:
        return out

    parents = []
    vjps = []
    if isinstance(a, Var):

        def vjp_x(g):
            dy = g * gv
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * y).mean(axis=-1, keepdims=True)
            return inv * (dy - m1 - y * m2)

        parents.append(a)
        vjps.append(vjp_x)
    if isinstance(gamma, Var):
        parents.append(gamma)
        vjps.append(lambda g: (g * y).reshape(-1, d).sum(axis=0))
    if isinstance(beta, Var):
        parents.append(beta)
        vjps.append(lambda g: g.reshape(-1, d).sum(axis=0))

    def vjp(g):
        return [f(g) for f in vjps]

    return tape._record(out, tuple(parents), vjp)


def detach(a):
    """Return a variable with the same primal but no gradient flow through it."""
    if not isinstance(a, Var):
        return a
    return a.tape._record(a.value, (), None)


def backward(output: Var) -> None:
    """Module-level convenience for ``output.tape.backward(output)``."""
    output.tape.backward(output)
