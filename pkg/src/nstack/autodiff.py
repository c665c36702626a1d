"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every operation is an :class:`Op` with a numpy forward and a vector-Jacobian
product.  Evaluating an op through :meth:`Tape.record` appends a node holding
the op, its input node ids, its attributes and its output, so the tape can be
replayed forward or walked backward from a scalar root.

Ops that work in log space (``log``, ``logsumexp``, ``logmatmul``, ...) are
allowed to produce ``-inf`` (log of zero); every other op rejects non-finite
output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "Op",
    "Tape",
    "Tensor",
    "Semiring",
    "REAL",
    "LOG",
    "FiniteDiffReport",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """An operation produced a value outside what its contract allows."""


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable[..., np.ndarray]
    # vjp(g, out, inputs, needs, **attrs) -> sequence of gradients (None = skip)
    vjp: Callable[..., Sequence[np.ndarray | None]]
    allow_neg_inf: bool = False


@dataclass
class Node:
    op: Op | None
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    requires_grad: bool
    name: str | None = None


class Tape:
    """An append-only record of evaluated operations.

    Parameters are named leaves; constants are unnamed leaves that never
    receive gradients.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _leaf(self, value, requires_grad, name=None) -> "Tensor":
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node(None, (), {}, value, requires_grad, name))
        return Tensor(self, len(self.nodes) - 1)

    def parameter(self, name: str, value) -> "Tensor":
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        t = self._leaf(np.array(value, dtype=np.float64), True, name)
        self.params[name] = t.index
        return t

    def constant(self, value) -> "Tensor":
        return self._leaf(value, False)

    def lift(self, x) -> "Tensor":
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ValueError("tensor belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, op: Op, inputs: Sequence, **attrs) -> "Tensor":
        """Evaluate ``op`` on ``inputs`` and append the result as a node."""
        ts = [self.lift(x) for x in inputs]
        vals = [self.nodes[t.index].value for t in ts]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
            out = op.forward(*vals, **attrs)
        out = np.asarray(out, dtype=np.float64)
        _check_finite(op, out)
        req = any(self.nodes[t.index].requires_grad for t in ts)
        self.nodes.append(Node(op, tuple(t.index for t in ts), attrs, out, req))
        return Tensor(self, len(self.nodes) - 1)

    record_and_eval = record

    def replay(self) -> list[np.ndarray]:
        """Recompute every node forward from the leaves."""
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.op is None:
                vals.append(node.value)
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
                vals.append(np.asarray(node.op.forward(*(vals[i] for i in node.inputs), **node.attrs),
                                       dtype=np.float64))
        return vals

    def backward(self, root: "Tensor") -> dict[str, np.ndarray]:
        """Gradient of a scalar root with respect to every registered parameter."""
        root_node = self.nodes[root.index]
        if root_node.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root_node.value.shape}")
        grads: list[np.ndarray | None] = [None] * (root.index + 1)
        grads[root.index] = np.ones_like(root_node.value)
        for idx in range(root.index, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.op is None or not node.requires_grad:
                continue
            ins = [self.nodes[i] for i in node.inputs]
            needs = tuple(n.requires_grad for n in ins)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
                gin = node.op.vjp(g, node.value, [n.value for n in ins], needs, **node.attrs)
            for i, n, gi, need in zip(node.inputs, ins, gin, needs):
                if not need or gi is None:
                    continue
                if gi.shape != n.value.shape:
                    raise ShapeError(
                        f"{node.op.name}: gradient shape {gi.shape} does not match input {n.value.shape}")
                grads[i] = gi if grads[i] is None else grads[i] + gi
            grads[idx] = None
        out = {}
        for name, idx in self.params.items():
            g = grads[idx] if idx < len(grads) else None
            out[name] = np.zeros_like(self.nodes[idx].value) if g is None else g
        return out


def backward(tape: Tape, root: "Tensor") -> dict[str, np.ndarray]:
    return tape.backward(root)


def _check_finite(op: Op, out: np.ndarray):
    if op.allow_neg_inf:
        bad = np.isnan(out) | (out == np.inf)
    else:
        bad = ~np.isfinite(out)
    if bad.any():
        raise NonFiniteError(f"{op.name} produced {int(bad.sum())} non-finite value(s)")


# ----------------------------------------------------------------------
# Tensor handle


class Tensor:
    """A handle to one node on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(self.tape.lift(o), self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(self.tape.lift(o), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _record(op, *xs, **attrs) -> Tensor:
    return _tape_of(*xs).record(op, xs, **attrs)


# ----------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bshape(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _binary(name, fwd, da, db, allow_neg_inf=False):
    def forward(a, b):
        _bshape(name, a, b)
        return fwd(a, b)

    def vjp(g, out, ins, needs):
        a, b = ins
        return (_unbroadcast(da(g, out, a, b), a.shape) if needs[0] else None,
                _unbroadcast(db(g, out, a, b), b.shape) if needs[1] else None)

    return Op(name, forward, vjp, allow_neg_inf)


ADD = _binary("add", np.add, lambda g, o, a, b: g, lambda g, o, a, b: g, allow_neg_inf=True)
SUB = _binary("sub", np.subtract, lambda g, o, a, b: g, lambda g, o, a, b: -g, allow_neg_inf=True)
MUL = _binary("mul", np.multiply, lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)
DIV = _binary("div", np.divide, lambda g, o, a, b: g / b, lambda g, o, a, b: -g * o / b)


def _logaddexp_vjp_side(g, o, x):
    w = np.exp(x - o)
    w[~np.isfinite(o)] = 0.0
    return g * w


LOGADDEXP = _binary("logaddexp", np.logaddexp,
                    lambda g, o, a, b: _logaddexp_vjp_side(g, o, a),
                    lambda g, o, a, b: _logaddexp_vjp_side(g, o, b), allow_neg_inf=True)


def add(a, b):
    return _record(ADD, a, b)


def sub(a, b):
    return _record(SUB, a, b)


def mul(a, b):
    return _record(MUL, a, b)


def div(a, b):
    return _record(DIV, a, b)


def logaddexp(a, b):
    return _record(LOGADDEXP, a, b)


def _unary(name, fwd, dfn, allow_neg_inf=False):
    return Op(name, lambda x: fwd(x), lambda g, o, ins, needs: (dfn(g, o, ins[0]),), allow_neg_inf)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


NEG = _unary("neg", np.negative, lambda g, o, x: -g, allow_neg_inf=True)
EXP = _unary("exp", np.exp, lambda g, o, x: g * o)
LOG_OP = _unary("log", np.log, lambda g, o, x: g / x, allow_neg_inf=True)
SIGMOID = _unary("sigmoid", _sigmoid, lambda g, o, x: g * o * (1.0 - o))
TANH = _unary("tanh", np.tanh, lambda g, o, x: g * (1.0 - o * o))


LOG_SIGMOID = _unary("log_sigmoid", lambda x: -np.logaddexp(0.0, -x), lambda g, o, x: g * (1.0 - np.exp(o)))


def log_sigmoid(x):
    return _record(LOG_SIGMOID, x)


def neg(x):
    return _record(NEG, x)


def exp(x):
    return _record(EXP, x)


def log(x):
    return _record(LOG_OP, x)


def sigmoid(x):
    return _record(SIGMOID, x)


def tanh(x):
    return _record(TANH, x)


# ----------------------------------------------------------------------
# products and contractions


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch shapes of {a.shape} and {b.shape} do not broadcast") from None
    return np.matmul(a, b)


def _matmul_vjp(g, out, ins, needs):
    a, b = ins
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if needs[0] else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
    return ga, gb


MATMUL = Op("matmul", _matmul_fwd, _matmul_vjp)


def matmul(a, b):
    return _record(MATMUL, a, b)


def _affine_fwd(x, w, b):
    if w.ndim != 2 or x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine: input {x.shape}, weight {w.shape}, bias {b.shape} are inconsistent")
    return x @ w.T + b


def _affine_vjp(g, out, ins, needs):
    x, w, b = ins
    gx = g @ w if needs[0] else None
    gw = g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1]) if needs[1] else None
    gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if needs[2] else None
    return gx, gw, gb


AFFINE = Op("affine", _affine_fwd, _affine_vjp)


def affine(x, w, b):
    """``x @ w.T + b`` with ``w`` of shape (out, in)."""
    return _record(AFFINE, x, w, b)


def _shift(x: np.ndarray, axis) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    return m


def logmatmul_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(exp(a) @ exp(b)) computed with row/column max shifts."""
    _matmul_fwd(a[..., :1, :], b[..., :, :1])
    sa, sb = _shift(a, -1), _shift(b, -2)
    c = np.matmul(np.exp(a - sa), np.exp(b - sb))
    return np.log(c) + sa + sb


def logmatmul_backward(g, out, a, b, needs=(True, True)):
    sa, sb = _shift(a, -1), _shift(b, -2)
    ea, eb = np.exp(a - sa), np.exp(b - sb)
    w = g * np.exp(sa + sb - out)
    w[~np.isfinite(out)] = 0.0
    ga = _unbroadcast(ea * np.matmul(w, np.swapaxes(eb, -1, -2)), a.shape) if needs[0] else None
    gb = _unbroadcast(eb * np.matmul(np.swapaxes(ea, -1, -2), w), b.shape) if needs[1] else None
    return ga, gb


LOGMATMUL = Op("logmatmul", logmatmul_forward,
               lambda g, out, ins, needs: logmatmul_backward(g, out, ins[0], ins[1], needs),
               allow_neg_inf=True)


def logmatmul(a, b):
    """Matrix product in the log semiring."""
    return _record(LOGMATMUL, a, b)


def _einsum_parse(spec, shapes):
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != len(shapes):
        raise ShapeError(f"einsum {spec!r} expects {len(ins)} operands, got {len(shapes)}")
    dims = {}
    for sub_, shp in zip(ins, shapes):
        if len(sub_) != len(shp):
            raise ShapeError(f"einsum {spec!r}: operand subscripts {sub_!r} do not match shape {shp}")
        for c, n in zip(sub_, shp):
            if dims.setdefault(c, n) != n:
                raise ShapeError(f"einsum {spec!r}: axis {c!r} has sizes {dims[c]} and {n}")
    return ins, out, dims


def _einsum_fwd(*xs, spec):
    _einsum_parse(spec, [x.shape for x in xs])
    return np.einsum(spec, *xs, optimize=True)


def _einsum_vjp(g, out, ins, needs, spec):
    subs, osub, dims = _einsum_parse(spec, [x.shape for x in ins])
    grads = []
    for k, (sk, xk) in enumerate(zip(subs, ins)):
        if not needs[k]:
            grads.append(None)
            continue
        others = [(s, x) for j, (s, x) in enumerate(zip(subs, ins)) if j != k]
        avail = set(osub).union(*[set(s) for s, _ in others]) if others else set(osub)
        keep = "".join(c for c in dict.fromkeys(sk) if c in avail)
        gspec = ",".join([osub] + [s for s, _ in others]) + "->" + keep
        gk = np.einsum(gspec, g, *[x for _, x in others], optimize=True)
        if keep != sk:
            # axes summed inside operand k alone: broadcast back
            shape = [dims[c] if c in keep else 1 for c in sk]
            order = [keep.index(c) for c in sk if c in keep]
            gk = np.broadcast_to(np.transpose(gk, order).reshape(shape), xk.shape).copy()
        grads.append(gk)
    return grads


EINSUM = Op("einsum", _einsum_fwd, _einsum_vjp)


def einsum(spec: str, *xs):
    """Contraction over named axes (no repeated subscripts within an operand)."""
    return _record(EINSUM, *xs, spec=spec)


# ----------------------------------------------------------------------
# reductions and normalizers


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g, shape, axis, keepdims):
    if not keepdims:
        for a in sorted(_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


SUM = Op("sum", lambda x, axis=None, keepdims=False: np.sum(x, axis=axis, keepdims=keepdims),
         lambda g, o, ins, needs, axis=None, keepdims=False: (_expand(g, ins[0].shape, axis, keepdims).copy(),))


def sum_(x, axis=None, keepdims=False):
    return _record(SUM, x, axis=axis, keepdims=keepdims)


def _lse_fwd(x, axis=None, keepdims=False):
    m = _shift(x, _axes(axis, x.ndim))
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=_axes(axis, x.ndim))


def _lse_vjp(g, o, ins, needs, axis=None, keepdims=False):
    x = ins[0]
    o = _expand(o, x.shape, axis, keepdims)
    g = _expand(g, x.shape, axis, keepdims)
    w = np.exp(x - o)
    w[~np.isfinite(o)] = 0.0
    return (g * w,)


LOGSUMEXP = Op("logsumexp", _lse_fwd, _lse_vjp, allow_neg_inf=True)


def logsumexp(x, axis=None, keepdims=False):
    return _record(LOGSUMEXP, x, axis=axis, keepdims=keepdims)


def _log_softmax_fwd(x, axis=-1):
    return x - _lse_fwd(x, axis=axis, keepdims=True)


def _log_softmax_vjp(g, o, ins, needs, axis=-1):
    return (g - np.exp(o) * g.sum(axis=axis, keepdims=True),)


LOG_SOFTMAX = Op("log_softmax", _log_softmax_fwd, _log_softmax_vjp)


def log_softmax(x, axis=-1):
    return _record(LOG_SOFTMAX, x, axis=axis)


def _softmax_vjp(g, o, ins, needs, axis=-1):
    return (o * (g - (g * o).sum(axis=axis, keepdims=True)),)


SOFTMAX = Op("softmax", lambda x, axis=-1: np.exp(_log_softmax_fwd(x, axis)), _softmax_vjp)


def softmax(x, axis=-1):
    return _record(SOFTMAX, x, axis=axis)


def _normalize_fwd(x, axis=-1):
    s = x.sum(axis=axis, keepdims=True)
    if np.any(s <= 0):
        raise NonFiniteError("normalize: a slice has no positive mass")
    return x / s


def _normalize_vjp(g, o, ins, needs, axis=-1):
    s = ins[0].sum(axis=axis, keepdims=True)
    return ((g - (g * o).sum(axis=axis, keepdims=True)) / s,)


NORMALIZE = Op("normalize", _normalize_fwd, _normalize_vjp)


def normalize(x, axis=-1):
    """Divide a nonnegative array by its sum along ``axis``."""
    return _record(NORMALIZE, x, axis=axis)


def _xent_fwd(logits, targets):
    lp = _log_softmax_fwd(logits, -1)
    return -np.take_along_axis(lp, targets.astype(np.int64)[..., None], -1)[..., 0]


def _xent_vjp(g, o, ins, needs):
    logits, targets = ins
    p = np.exp(_log_softmax_fwd(logits, -1))
    np.put_along_axis(p, targets.astype(np.int64)[..., None],
                      np.take_along_axis(p, targets.astype(np.int64)[..., None], -1) - 1.0, -1)
    return g[..., None] * p, None


XENT = Op("cross_entropy", _xent_fwd, _xent_vjp)


def cross_entropy(logits, targets):
    """Per-row negative log-softmax probability of integer ``targets``."""
    tape = _tape_of(logits)
    return tape.record(XENT, (logits, tape.constant(np.asarray(targets, dtype=np.float64))))


# ----------------------------------------------------------------------
# structural


def _basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def _getitem_vjp(g, o, ins, needs, index):
    gx = np.zeros_like(ins[0])
    if _basic_index(index):
        gx[index] += g
    else:
        np.add.at(gx, index, g)
    return (gx,)


GETITEM = Op("getitem", lambda x, index: np.array(x[index]), _getitem_vjp, allow_neg_inf=True)


def getitem(x, index):
    return _record(GETITEM, x, index=index)


def _reshape_fwd(x, shape):
    try:
        return x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None


RESHAPE = Op("reshape", _reshape_fwd,
             lambda g, o, ins, needs, shape: (g.reshape(ins[0].shape),), allow_neg_inf=True)


def reshape(x, shape):
    return _record(RESHAPE, x, shape=tuple(shape))


TRANSPOSE = Op("transpose", lambda x, axes: np.transpose(x, axes),
               lambda g, o, ins, needs, axes: (np.transpose(g, np.argsort(axes)),), allow_neg_inf=True)


def transpose(x, axes):
    return _record(TRANSPOSE, x, axes=tuple(axes))


def _concat_fwd(*xs, axis=0):
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concatenate: shapes {ref} and {x.shape} differ off axis {axis}")
    return np.concatenate(xs, axis=axis)


def _concat_vjp(g, o, ins, needs, axis=0):
    cuts = np.cumsum([x.shape[axis] for x in ins])[:-1]
    return np.split(g, cuts, axis=axis)


CONCAT = Op("concatenate", _concat_fwd, _concat_vjp, allow_neg_inf=True)


def concatenate(xs, axis=0):
    return _record(CONCAT, *xs, axis=axis)


def _stack_fwd(*xs, axis=0):
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeError(f"stack: shapes {xs[0].shape} and {x.shape} differ")
    return np.stack(xs, axis=axis)


STACK = Op("stack", _stack_fwd,
           lambda g, o, ins, needs, axis=0: [np.take(g, i, axis=axis) for i in range(len(ins))],
           allow_neg_inf=True)


def stack(xs, axis=0):
    return _record(STACK, *xs, axis=axis)


# ----------------------------------------------------------------------
# semirings


@dataclass(frozen=True)
class Semiring:
    """Real or log representation of nonnegative weights.

    Dynamic programs over runs are written once against this interface.
    """

    mode: str
    zero: float = field(init=False)
    one: float = field(init=False)

    def __post_init__(self):
        if self.mode not in ("real", "log"):
            raise ValueError(f"unknown semiring mode {self.mode!r}")
        object.__setattr__(self, "zero", 0.0 if self.mode == "real" else -np.inf)
        object.__setattr__(self, "one", 1.0 if self.mode == "real" else 0.0)

    @property
    def is_log(self):
        return self.mode == "log"

    def add(self, a, b):
        return logaddexp(a, b) if self.is_log else add(a, b)

    def mul(self, a, b):
        return add(a, b) if self.is_log else mul(a, b)

    def matmul(self, a, b):
        return logmatmul(a, b) if self.is_log else matmul(a, b)

    def sum(self, x, axis=None, keepdims=False):
        return logsumexp(x, axis, keepdims) if self.is_log else sum_(x, axis, keepdims)

    def from_real(self, x):
        """Encode nonnegative real weights (numpy) in this semiring."""
        x = np.asarray(x, dtype=np.float64)
        if self.is_log:
            with np.errstate(divide="ignore"):
                return np.log(x)
        return x

    def to_real(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.exp(x) if self.is_log else x

    def is_zero(self, x):
        """Elementwise test for the semiring zero, without leaving the encoding."""
        x = np.asarray(x, dtype=np.float64)
        return x == -np.inf if self.is_log else x <= 0

    def normalize(self, x, axis=-1):
        """Turn weights into a real-valued distribution along ``axis``."""
        if self.is_log:
            return exp(sub(x, logsumexp(x, axis=axis, keepdims=True)))
        return normalize(x, axis=axis)

    def np_add(self, a, b):
        return np.logaddexp(a, b) if self.is_log else a + b

    def np_mul(self, a, b):
        return a + b if self.is_log else a * b

    def np_matmul(self, a, b):
        return logmatmul_forward(a, b) if self.is_log else np.matmul(a, b)


REAL = Semiring("real")
LOG = Semiring("log")


# ----------------------------------------------------------------------
# gradient checking


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    tol: float
    worst: tuple[str, tuple] | None
    inconclusive: list[tuple[str, tuple]]
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol and self.checked > 0

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: max relative deviation {self.max_rel_error:.3e} (tol {self.tol:g}) "
                f"over {self.checked} coordinates, {len(self.inconclusive)} inconclusive")


def finite_diff_check(f, theta: dict[str, np.ndarray], step=1e-5, tol=1e-4, floor=1e-5,
                      max_coords=None, rng=None) -> FiniteDiffReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f(tape, params)`` receives a fresh tape and a dict of parameter tensors
    and must return a scalar tensor.  The deviation for each coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.  The floor
    keeps central-difference roundoff (about eps * |f| / step, ~1e-10 for a
    loss of a few nats at step 1e-5) from dominating near-zero gradients.
    ``max_coords`` limits the check to a random subset of coordinates per
    parameter.
    """
    theta = {k: np.array(v, dtype=np.float64) for k, v in theta.items()}

    def value(th):
        tape = Tape()
        params = {k: tape.parameter(k, v) for k, v in th.items()}
        return tape, f(tape, params)

    tape, root = value(theta)
    analytic = tape.backward(root)

    def scalar(th):
        try:
            v = float(value(th)[1].data)
        except (NonFiniteError, FloatingPointError):
            return np.nan
        return v

    rng = rng if rng is not None else np.random.default_rng(0)
    worst, max_err, checked, inconclusive = None, 0.0, 0, []
    for name, arr in theta.items():
        coords = list(np.ndindex(arr.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for c in coords:
            orig = arr[c]
            arr[c] = orig + step
            fp = scalar(theta)
            arr[c] = orig - step
            fm = scalar(theta)
            arr[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                inconclusive.append((name, c))
                continue
            num = (fp - fm) / (2 * step)
            ana = analytic[name][c]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > max_err or worst is None:
                max_err = max(err, max_err)
                if err >= max_err:
                    worst = (name, c)
    return FiniteDiffReport(max_err, tol, worst, inconclusive, checked)
