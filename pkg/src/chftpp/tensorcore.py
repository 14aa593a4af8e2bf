"""Small reverse-mode differentiation engine with one forward tangent channel.

Every :class:`Var` carries a primal array and, optionally, the forward
derivative of that array with respect to a single designated scalar input
(the inter-event time ``tau``).  The tangent is itself a recorded ``Var``,
so quantities such as ``log(d phi / d tau)`` can be differentiated with
respect to parameters by ordinary reverse accumulation.

Tangent bookkeeping:

* ``dual=True, tangent=None``: the value does not depend on tau; its tangent
  is exactly zero.
* ``dual=True, tangent=<Var>``: tangent is tracked.
* ``dual=False``: tangent channel inactive.  Tangent vars themselves are
  non-dual, which is what stops the recursion at first order.
"""
from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12

__all__ = [
    "Var", "const", "tau_input", "tangent_of", "backward", "ParameterStore",
    "add", "sub", "mul", "neg", "matmul", "concat", "stack", "reshape",
    "getitem", "take_rows", "pick", "tanh", "relu", "sigmoid", "softplus",
    "prelu", "exp", "log", "safe_log", "square", "sum", "mean", "softmax", "log_softmax",
    "activation", "TangentError",
]


class TangentError(RuntimeError):
    """Raised when the tangent channel is requested but not tracked."""


class Var:
    __slots__ = ("value", "tangent", "dual", "parents", "vjp", "grad", "name")

    def __init__(self, value, parents: tuple = (), vjp=None, *, dual=True, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.dual = dual
        self.tangent: Var | None = None
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dual={self.dual}, name={self.name!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def const(x) -> Var:
    """A value independent of tau (zero tangent)."""
    return Var(x)


def tau_input(x) -> Var:
    """The designated scalar input; its tangent is exactly one."""
    v = Var(x, name="tau")
    v.tangent = Var(np.ones_like(v.value), dual=False)
    return v


def tangent_of(v: Var) -> Var:
    """Lift the forward tangent of ``v`` into a differentiable value."""
    if not v.dual:
        raise TangentError("tangent channel is not active for this value")
    if v.tangent is None:
        return Var(np.zeros_like(v.value), dual=False)
    return v.tangent


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(value, parents, vjp, tangent_fn=None) -> Var:
    """Create an op output; ``tangent_fn`` builds the tangent from parent tangents."""
    dual = all(p.dual for p in parents)
    out = Var(value, parents, vjp, dual=dual)
    if dual and tangent_fn is not None and any(p.tangent is not None for p in parents):
        out.tangent = tangent_fn(*[p.tangent for p in parents])
    return out


def _nd(v: Var) -> Var:
    """Non-dual alias of ``v`` for use inside tangent expressions."""
    return Var(v.value, (v,), lambda g: (g,), dual=False)


def _zt(t: Var | None, like: Var) -> Var:
    return t if t is not None else Var(np.zeros_like(like.value), dual=False)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.value.shape, b.value.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    def tan(ta, tb):
        if ta is None:
            return tb
        if tb is None:
            return ta
        return add(ta, tb)

    return _node(a.value + b.value, (a, b), vjp, tan)


def neg(a) -> Var:
    a = _wrap(a)
    return _node(-a.value, (a,), lambda g: (-g,), lambda t: neg(t))


def sub(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.value.shape, b.value.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    def tan(ta, tb):
        if ta is None:
            return neg(tb)
        if tb is None:
            return ta
        return sub(ta, tb)

    return _node(a.value - b.value, (a, b), vjp, tan)


def mul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    def tan(ta, tb):
        terms = []
        if ta is not None:
            terms.append(mul(ta, _nd(b)))
        if tb is not None:
            terms.append(mul(_nd(a), tb))
        return terms[0] if len(terms) == 1 else add(*terms)

    return _node(av * bv, (a, b), vjp, tan)


def square(a) -> Var:
    return mul(a, a)


def matmul(a, b) -> Var:
    """``a @ b`` for an N-D ``a`` and a 1-D or 2-D ``b``."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def vjp(g):
        if bv.ndim == 1:
            ga = g[..., None] * bv
            gb = av.reshape(-1, bv.shape[0]).T @ np.reshape(g, -1)
            return ga, gb
        ga = g @ bv.T
        gb = av.reshape(-1, bv.shape[0]).T @ g.reshape(-1, bv.shape[1])
        return ga, gb

    def tan(ta, tb):
        terms = []
        if ta is not None:
            terms.append(matmul(ta, _nd(b)))
        if tb is not None:
            terms.append(matmul(_nd(a), tb))
        return terms[0] if len(terms) == 1 else add(*terms)

    return _node(av @ bv, (a, b), vjp, tan)


def transpose(a) -> Var:
    a = _wrap(a)
    return _node(a.value.T, (a,), lambda g: (g.T,), lambda t: transpose(t))


def sum(a, axis=None, keepdims=False) -> Var:  # noqa: A001
    a = _wrap(a)
    shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp,
                 lambda t: sum(t, axis, keepdims))


def mean(a, axis=None) -> Var:
    a = _wrap(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


# ------------------------------------------------------------------ shaping

def concat(xs: Sequence, axis: int = -1) -> Var:
    xs = [_wrap(x) for x in xs]
    vals = [x.value for x in xs]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    cuts = np.cumsum([v.shape[ax] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))

    def tan(*ts):
        return concat([_zt(t, x) for t, x in zip(ts, xs)], axis)

    return _node(out, tuple(xs), vjp, tan)


def stack(xs: Sequence, axis: int = 0) -> Var:
    xs = [_wrap(x) for x in xs]
    out = np.stack([x.value for x in xs], axis=axis)
    n = len(xs)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    def tan(*ts):
        return stack([_zt(t, x) for t, x in zip(ts, xs)], axis)

    return _node(out, tuple(xs), vjp, tan)


def reshape(a, shape) -> Var:
    a = _wrap(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),),
                 lambda t: reshape(t, shape))


def getitem(a, key) -> Var:
    a = _wrap(a)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _node(a.value[key], (a,), vjp, lambda t: getitem(t, key))


def take_rows(table, idx) -> Var:
    """Row lookup ``table[idx]`` (embedding gather)."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.int64)
    n_rows = table.value.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"row index out of range [0, {n_rows})")
    shape = table.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(table.value[idx], (table,), vjp, lambda t: take_rows(t, idx))


def pick(a, idx) -> Var:
    """``a[i, idx[i]]`` for a 2-D ``a``."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.value.shape[0])
    return getitem(a, (rows, idx))


# ------------------------------------------------------------ elementwise

def _unary(x: Var, y: np.ndarray, d1: np.ndarray, d2: np.ndarray | None) -> Var:
    """Elementwise op with first derivative ``d1`` and second ``d2`` at x."""

    def vjp(g):
        return (g * d1,)

    def tan(tx):
        def tvjp(g):
            gx = np.zeros_like(d1) if d2 is None else g * d2 * tx.value
            return gx, g * d1
        return Var(d1 * tx.value, (x, tx), tvjp, dual=False)

    return _node(y, (x,), vjp, tan)


def tanh(x) -> Var:
    x = _wrap(x)
    y = np.tanh(x.value)
    d1 = 1.0 - y * y
    return _unary(x, y, d1, -2.0 * y * d1)


def relu(x) -> Var:
    x = _wrap(x)
    on = (x.value > 0).astype(np.float64)
    return _unary(x, x.value * on, on, None)


def sigmoid(x) -> Var:
    x = _wrap(x)
    s = _sigmoid(x.value)
    d1 = s * (1.0 - s)
    return _unary(x, s, d1, d1 * (1.0 - 2.0 * s))


def exp(x) -> Var:
    x = _wrap(x)
    y = np.exp(x.value)
    return _unary(x, y, y, y)


def log(x, floor: float | None = None) -> Var:
    """Natural log.  With ``floor`` set, computes ``log(max(x, floor))`` with
    zero slope below the floor; otherwise nonpositive input is a domain error."""
    x = _wrap(x)
    if floor is None:
        if np.any(x.value <= 0):
            raise FloatingPointError("log of nonpositive value")
        return _unary(x, np.log(x.value), 1.0 / x.value, -1.0 / (x.value * x.value))
    xc = np.maximum(x.value, floor)
    live = (x.value > floor).astype(np.float64)
    return _unary(x, np.log(xc), live / xc, -live / (xc * xc))


def safe_log(x) -> Var:
    return log(x, LOG_FLOOR)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x, eta) -> Var:
    """``(1/eta) log(1 + exp(eta x))`` with trainable scalar ``eta > 0``."""
    x, eta = _wrap(x), _wrap(eta)
    e = max(float(eta.value), 1e-6)  # eta is kept >= 0 by projection
    z = e * x.value
    lse = np.logaddexp(0.0, z)
    s = _sigmoid(z)
    ds = s * (1.0 - s)
    y = lse / e

    def vjp(g):
        gx = g * s
        geta = np.sum(g * (x.value * s / e - lse / (e * e)))
        return gx, np.reshape(geta, eta.value.shape)

    def tan(tx, teta):
        # eta never depends on tau
        def tvjp(g):
            return (g * e * ds * tx.value, g * s,
                    np.reshape(np.sum(g * x.value * ds * tx.value), eta.value.shape))
        return Var(s * tx.value, (x, tx, eta), tvjp, dual=False)

    return _node(y, (x, eta), vjp, lambda tx, teta: tan(_zt(tx, x), teta))


def prelu(x, eta) -> Var:
    """``max(eta x, x)`` with trainable scalar ``eta``."""
    x, eta = _wrap(x), _wrap(eta)
    e = float(eta.value)
    ex = e * x.value
    use_eta = ex > x.value
    slope = np.where(use_eta, e, 1.0)
    y = np.where(use_eta, ex, x.value)

    def vjp(g):
        return g * slope, np.reshape(np.sum(g * x.value * use_eta), eta.value.shape)

    def tan(tx):
        def tvjp(g):
            return (np.zeros_like(slope), g * slope,
                    np.reshape(np.sum(g * tx.value * use_eta), eta.value.shape))
        return Var(slope * tx.value, (x, tx, eta), tvjp, dual=False)

    return _node(y, (x, eta), vjp, lambda tx, teta: tan(_zt(tx, x)))


ACTIVATIONS = ("tanh", "relu", "prelu", "softplus", "sigmoid")


def activation(kind: str, x, eta=None) -> Var:
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "prelu":
        return prelu(x, eta)
    if kind == "softplus":
        return softplus(x, eta)
    raise ValueError(f"unknown activation {kind!r}")


def log_softmax(x, axis: int = -1) -> Var:
    x = _wrap(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    out = _node(y, (x,), vjp)
    if out.dual and x.tangent is not None:
        p_nd = exp(_nd(out))
        out.tangent = sub(x.tangent, sum(mul(p_nd, x.tangent), axis=axis, keepdims=True))
    return out


def softmax(x, axis: int = -1) -> Var:
    return exp(log_softmax(x, axis))


# ---------------------------------------------------------------- backward

def _topo(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack_: list[tuple[Var, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Var, params: ParameterStore | None = None) -> dict[str, np.ndarray]:
    """Reverse accumulation from a scalar ``loss``.

    Leaf ``Var`` objects receive ``.grad``.  When ``params`` is given, the
    gradients of its bound leaves are written to ``params.grad`` (parameters
    not reached get exactly zero) and returned by name.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + gp
            else:
                grads[k] = gp
    if params is None:
        return {}
    out = {}
    for name, leaf in params.bound.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        params.grad[name] = np.array(g, dtype=np.float64).reshape(params.value[name].shape)
        out[name] = params.grad[name]
    return out


# --------------------------------------------------------------- parameters

@dataclass
class ParameterStore:
    """Named float64 tensors with gradient buffers and positivity masks."""

    value: dict[str, np.ndarray] = field(default_factory=dict)
    grad: dict[str, np.ndarray] = field(default_factory=dict)
    positive: dict[str, np.ndarray] = field(default_factory=dict)
    bound: dict[str, Var] = field(default_factory=dict, repr=False)

    def add(self, name: str, value, positive=False) -> None:
        value = np.array(value, dtype=np.float64)
        mask = np.broadcast_to(np.asarray(positive, dtype=bool), value.shape).copy()
        self.value[name] = value
        self.grad[name] = np.zeros_like(value)
        self.positive[name] = mask

    def names(self) -> list[str]:
        return list(self.value)

    def __contains__(self, name):
        return name in self.value

    def __getitem__(self, name) -> np.ndarray:
        return self.value[name]

    def bind(self) -> dict[str, Var]:
        """Fresh leaf vars for one recording (forward pass)."""
        self.bound = {k: Var(v, name=k) for k, v in self.value.items()}
        return self.bound

    def project(self) -> None:
        """Absolute value on every positivity-flagged entry."""
        for k, mask in self.positive.items():
            if mask.any():
                v = self.value[k]
                v[mask] = np.abs(v[mask])

    def zero_grad(self) -> None:
        for g in self.grad.values():
            g[...] = 0.0

    def copy(self) -> ParameterStore:
        out = ParameterStore()
        for k in self.value:
            out.value[k] = self.value[k].copy()
            out.grad[k] = self.grad[k].copy()
            out.positive[k] = self.positive[k].copy()
        return out

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        for k, v in values.items():
            if k not in self.value:
                raise KeyError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.value[k].shape:
                raise ValueError(f"shape mismatch for {k!r}: {v.shape} vs {self.value[k].shape}")
            self.value[k][...] = v

    def count(self) -> int:
        return int(np.sum([v.size for v in self.value.values()]))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.value.values()])

    def set_flat(self, x: np.ndarray) -> None:
        i = 0
        for v in self.value.values():
            v.ravel()[...] = x[i:i + v.size]
            i += v.size


def numeric_grad(fn: Callable[[], float], arrays: Iterable[np.ndarray], eps: float = 1e-5):
    """Central finite differences of ``fn`` over every entry of ``arrays`` (mutated in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = fn()
            flat[i] = old - eps
            fm = fn()
            flat[i] = old
            gf[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out
