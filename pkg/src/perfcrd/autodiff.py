"""Array-valued reverse-mode differentiation on an append-only tape.

Each recorded node keeps its forward value, the indices of its parents and
the context its vector-Jacobian product (VJP) needs. Nodes are appended in
evaluation order, so a single reverse sweep over indices is a topological
traversal that visits every node once.

The functions in this module (``sigmoid``, ``log``, ``concat``...) accept
plain numpy arrays as well as :class:`Var`, so model and simulation code can
run untaped for evaluation and taped for training.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np


class NumericalError(FloatingPointError):
    """Non-finite value produced by a primitive during the forward pass."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(k for k, s in enumerate(shape) if s == 1 and grad.shape[k] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# VJP rules: (upstream grad, node context) -> tuple of grads, one per parent.
# Context always holds the parent shapes under "shapes".
def _vjp_add(g, ctx):
    return tuple(_unbroadcast(g, s) for s in ctx["shapes"])


def _vjp_sub(g, ctx):
    a, b = ctx["shapes"]
    return _unbroadcast(g, a), _unbroadcast(-g, b)


def _vjp_mul(g, ctx):
    x, y = ctx["x"], ctx["y"]
    return _unbroadcast(g * y, np.shape(x)), _unbroadcast(g * x, np.shape(y))


def _vjp_div(g, ctx):
    x, y = ctx["x"], ctx["y"]
    return _unbroadcast(g / y, np.shape(x)), _unbroadcast(-g * x / (y * y), np.shape(y))


def _vjp_neg(g, ctx):
    return (_unbroadcast(-g, ctx["shapes"][0]),)


def _vjp_matmul(g, ctx):
    x, y = ctx["x"], ctx["y"]
    if x.ndim == 1 and y.ndim == 1:
        return g * y, g * x
    if x.ndim == 1:
        return g @ y.T, np.outer(x, g)
    if y.ndim == 1:
        return np.outer(g, y), x.T @ g
    return g @ y.T, x.T @ g


def _vjp_sigmoid(g, ctx):
    s = ctx["out"]
    return (g * s * (1.0 - s),)


def _vjp_tanh(g, ctx):
    t = ctx["out"]
    return (g * (1.0 - t * t),)


def _vjp_log(g, ctx):
    return (g / ctx["x"],)


def _vjp_exp(g, ctx):
    return (g * ctx["out"],)


def _vjp_clip(g, ctx):
    return (g * ctx["inside"],)


def _vjp_sum(g, ctx):
    shape, axis = ctx["shapes"][0], ctx["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def _vjp_reshape(g, ctx):
    return (g.reshape(ctx["shapes"][0]),)


def _vjp_transpose(g, ctx):
    return (g.T,)


def _vjp_getitem(g, ctx):
    out = np.zeros(ctx["shapes"][0])
    np.add.at(out, ctx["index"], g)
    return (out,)


def _vjp_concat(g, ctx):
    axis, sizes = ctx["axis"], ctx["sizes"]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": _vjp_neg,
    "matmul": _vjp_matmul,
    "sigmoid": _vjp_sigmoid,
    "tanh": _vjp_tanh,
    "log": _vjp_log,
    "exp": _vjp_exp,
    "clip": _vjp_clip,
    "sum": _vjp_sum,
    "reshape": _vjp_reshape,
    "getitem": _vjp_getitem,
    "transpose": _vjp_transpose,
    "concat": _vjp_concat,
}


@contextlib.contextmanager
def corrupted_primitive(name: str, factor: float = 1.5):
    """Scale the local partials of one primitive; a negative control for gradient checks."""
    original = VJP[name]
    VJP[name] = lambda g, ctx: tuple(factor * x for x in original(g, ctx))
    try:
        yield
    finally:
        VJP[name] = original


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    ctx: dict


class Tape:
    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        return self._push("leaf", np.array(value, dtype=float), (), {})

    def _push(self, op, value, parents, ctx) -> "Var":
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite output from primitive '{op}' at tape node {len(self.nodes)}")
        self.nodes.append(_Node(op, parents, ctx))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1, value)

    def record(self, op: str, value, parents: tuple["Var", ...], **ctx) -> "Var":
        ctx["shapes"] = tuple(p.value.shape for p in parents)
        return self._push(op, np.asarray(value, dtype=float), tuple(p.index for p in parents), ctx)

    def backward(self, seeds, wrt):
        """Sum of vector-Jacobian products of the seeded nodes.

        ``seeds`` is a list of ``(Var, adjoint)`` pairs; the result holds, for
        each variable in ``wrt``, ``sum_k <adjoint_k, d seed_k / d wrt>``.
        """
        adj: dict[int, np.ndarray] = {}
        for var, a in seeds:
            a = np.broadcast_to(np.asarray(a, dtype=float), var.value.shape)
            adj[var.index] = adj[var.index] + a if var.index in adj else a.copy()
        if not adj:
            return [np.zeros_like(w.value) for w in wrt]
        stop = min(w.index for w in wrt)
        for idx in range(max(adj), stop - 1, -1):
            g = adj.get(idx)
            node = self.nodes[idx]
            if g is None or not node.parents:
                continue
            for p, pg in zip(node.parents, VJP[node.op](g, node.ctx)):
                adj[p] = adj[p] + pg if p in adj else pg
        return [adj.get(w.index, np.zeros_like(w.value)) for w in wrt]


class Var:
    """A taped array. Arithmetic with numpy arrays or scalars records a node."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return self.tape.record("transpose", self.value.T, (self,))

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, {self.value!r})"

    def _binary(self, op, other, fn, reflected=False):
        if isinstance(other, Var):
            x, y = (other, self) if reflected else (self, other)
            ctx = {"x": x.value, "y": y.value} if op in ("mul", "div", "matmul") else {}
            return self.tape.record(op, fn(x.value, y.value), (x, y), **ctx)
        c = np.asarray(other, dtype=float)
        if reflected:
            return _const_left(op, c, self, fn(c, self.value))
        return _const_right(op, self, c, fn(self.value, c))

    def __add__(self, o):
        return self._binary("add", o, np.add)

    def __radd__(self, o):
        return self._binary("add", o, np.add, reflected=True)

    def __sub__(self, o):
        return self._binary("sub", o, np.subtract)

    def __rsub__(self, o):
        return self._binary("sub", o, np.subtract, reflected=True)

    def __mul__(self, o):
        return self._binary("mul", o, np.multiply)

    def __rmul__(self, o):
        return self._binary("mul", o, np.multiply, reflected=True)

    def __truediv__(self, o):
        return self._binary("div", o, np.divide)

    def __rtruediv__(self, o):
        return self._binary("div", o, np.divide, reflected=True)

    def __matmul__(self, o):
        return self._binary("matmul", o, np.matmul)

    def __rmatmul__(self, o):
        return self._binary("matmul", o, np.matmul, reflected=True)

    def __neg__(self):
        return self.tape.record("neg", -self.value, (self,))

    def __getitem__(self, index):
        return self.tape.record("getitem", self.value[index], (self,), index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.record("reshape", self.value.reshape(shape), (self,))

    def sum(self, axis=None):
        return sum_(self, axis)


def _const_right(op, x: Var, c: np.ndarray, out) -> Var:
    """``x <op> c`` with ``c`` constant: recorded as a unary node on ``x``."""
    tape = x.tape
    if op in ("add", "sub"):
        return tape.record("add_c", out, (x,))
    if op == "mul":
        return tape.record("mul1", out, (x,), c=c)
    if op == "div":
        return tape.record("mul1", out, (x,), c=1.0 / c)
    if op == "matmul":
        return tape.record("matmul_r", out, (x,), c=c)
    raise AssertionError(op)


def _const_left(op, c: np.ndarray, x: Var, out) -> Var:
    """``c <op> x`` with ``c`` constant."""
    tape = x.tape
    if op == "add":
        return tape.record("add_c", out, (x,))
    if op == "sub":
        return tape.record("neg", out, (x,))
    if op == "mul":
        return tape.record("mul1", out, (x,), c=c)
    if op == "div":
        return tape.record("rdiv", out, (x,), c=c, x=x.value)
    if op == "matmul":
        return tape.record("matmul_l", out, (x,), c=c)
    raise AssertionError(op)


def _vjp_mul1(g, ctx):
    return (_unbroadcast(g * ctx["c"], ctx["shapes"][0]),)


def _vjp_rdiv(g, ctx):
    x = ctx["x"]
    return (_unbroadcast(-g * ctx["c"] / (x * x), ctx["shapes"][0]),)


def _vjp_matmul_r(g, ctx):
    # out = x @ c
    c = ctx["c"]
    shape = ctx["shapes"][0]
    if len(shape) == 1 and c.ndim == 1:
        return (g * c,)
    if c.ndim == 1:
        return (np.outer(g, c),)
    if len(shape) == 1:
        return (c @ g,)
    return (g @ c.T,)


def _vjp_matmul_l(g, ctx):
    # out = c @ x
    c = ctx["c"]
    shape = ctx["shapes"][0]
    if c.ndim == 1 and len(shape) == 1:
        return (g * c,)
    if c.ndim == 1:
        return (np.outer(c, g),)
    if len(shape) == 1:
        return (g @ c,)
    return (c.T @ g,)


def _vjp_add_c(g, ctx):
    return (_unbroadcast(g, ctx["shapes"][0]),)


VJP.update(add_c=_vjp_add_c, mul1=_vjp_mul1, rdiv=_vjp_rdiv, matmul_r=_vjp_matmul_r, matmul_l=_vjp_matmul_l)


def _is_var(x) -> bool:
    return isinstance(x, Var)


def sigmoid(x):
    if _is_var(x):
        out = _sig(x.value)
        return x.tape.record("sigmoid", out, (x,), out=out)
    return _sig(np.asarray(x, dtype=float))


def tanh(x):
    if _is_var(x):
        out = np.tanh(x.value)
        return x.tape.record("tanh", out, (x,), out=out)
    return np.tanh(x)


def log(x):
    if _is_var(x):
        return x.tape.record("log", np.log(x.value), (x,), x=x.value)
    return np.log(x)


def exp(x):
    if _is_var(x):
        out = np.exp(x.value)
        return x.tape.record("exp", out, (x,), out=out)
    return np.exp(x)


def clip(x, lo: float, hi: float):
    if _is_var(x):
        inside = ((x.value >= lo) & (x.value <= hi)).astype(float)
        return x.tape.record("clip", np.clip(x.value, lo, hi), (x,), inside=inside)
    return np.clip(x, lo, hi)


def sum_(x, axis=None):
    if _is_var(x):
        return x.tape.record("sum", np.sum(x.value, axis=axis), (x,), axis=axis)
    return np.sum(x, axis=axis)


def concat(parts, axis=0):
    """Concatenate arrays; constant parts are lifted to leaves of the first tape found."""
    tape = next((p.tape for p in parts if _is_var(p)), None)
    if tape is None:
        return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=axis)
    vars_ = [p if _is_var(p) else tape.leaf(p) for p in parts]
    sizes = [v.value.shape[axis] for v in vars_]
    out = np.concatenate([v.value for v in vars_], axis=axis)
    return tape.record("concat", out, tuple(vars_), axis=axis, sizes=sizes)


def _rowwise(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x[:, :, None] * y[None, :, :]).sum(axis=1)


def rowmatmul(x, y):
    """``x @ y`` for 2-D operands with the same summation order in every row.

    BLAS kernels may round rows differently; shared-weight message passing
    needs equal rows to stay bitwise equal.
    """
    xv, yv = value(x), value(y)
    if xv.ndim != 2 or yv.ndim != 2:
        raise ValueError("rowmatmul needs 2-D operands")
    out = _rowwise(np.asarray(xv, dtype=float), np.asarray(yv, dtype=float))
    if _is_var(x) and _is_var(y):
        return x.tape.record("matmul", out, (x, y), x=x.value, y=y.value)
    if _is_var(x):
        return _const_right("matmul", x, np.asarray(yv, dtype=float), out)
    if _is_var(y):
        return _const_left("matmul", np.asarray(xv, dtype=float), y, out)
    return out


def value(x) -> np.ndarray:
    """Forward value of a Var, or the array itself."""
    return x.value if _is_var(x) else np.asarray(x)


def grad(fn, phi) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar-valued ``fn(Var) -> Var`` at ``phi``."""
    tape = Tape()
    x = tape.leaf(phi)
    out = fn(x)
    if not _is_var(out):
        return float(out), np.zeros_like(x.value)
    (g,) = tape.backward([(out, 1.0)], [x])
    return float(out.value), g


@dataclass
class GradCheckReport:
    max_abs_error: float
    max_rel_error: float
    failing: list[int]
    tolerance: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return not self.failing


def finite_diff_check(fn, phi, step: float = 1e-5, tolerance: float = 1e-4, coords=None,
                      floor: float = 1e-8) -> GradCheckReport:
    """Compare the taped gradient of ``fn`` with central differences.

    ``fn`` must accept both a Var and a plain array. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; coordinates whose gradient is below
    ``floor`` in both estimates are judged on absolute error against
    ``tolerance * floor``.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be > 0")
    phi = np.array(phi, dtype=float)
    _, analytic = grad(fn, phi)
    coords = range(phi.size) if coords is None else list(coords)
    numeric = np.zeros(phi.size)
    for k in coords:
        e = np.zeros_like(phi)
        e.flat[k] = step
        numeric[k] = (float(value(fn(phi + e))) - float(value(fn(phi - e)))) / (2 * step)
    abs_err = np.zeros(phi.size)
    rel_err = np.zeros(phi.size)
    failing = []
    flat = analytic.ravel()
    for k in coords:
        a, n = flat[k], numeric[k]
        abs_err[k] = abs(a - n)
        rel_err[k] = abs_err[k] / max(abs(a), abs(n), floor)
        if rel_err[k] > tolerance:
            failing.append(k)
    return GradCheckReport(float(abs_err.max(initial=0.0)), float(rel_err.max(initial=0.0)),
                           failing, tolerance, flat.copy(), numeric)
