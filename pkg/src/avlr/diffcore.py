"""Minimal reverse-mode differentiation over dense float64 numpy arrays.

A :class:`Tape` records primitive operations in execution order; each
recorded value is addressed through a :class:`Var` handle.  Every primitive
also accepts plain arrays: when none of its inputs is a ``Var`` it simply
returns the computed ndarray, so the same model code runs with or without a
tape.

Also hosts the Adam optimizer and a central-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Tape:
    """Ordered record of primitives. Parents always precede children."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[tuple[Callable | None, ...]] = []

    def __len__(self):
        return len(self.values)

    def var(self, value) -> "Var":
        """Register a leaf."""
        return self._push(np.asarray(value, dtype=np.float64), (), ())

    def _push(self, value, parents, vjps) -> "Var":
        self.values.append(value)
        self.parents.append(tuple(parents))
        self.vjps.append(tuple(vjps))
        return Var(self, len(self.values) - 1)

    def backward(self, out: "Var", seed=None) -> list[np.ndarray | None]:
        """Adjoints of every node with respect to ``out``.

        Nodes that do not influence ``out`` get ``None``.
        """
        if out.tape is not self:
            raise ValueError("output belongs to another tape")
        adj: list[np.ndarray | None] = [None] * (out.idx + 1)
        adj[out.idx] = (np.ones_like(self.values[out.idx]) if seed is None
                        else np.asarray(seed, dtype=np.float64))
        for i in range(out.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            for p, vjp in zip(self.parents[i], self.vjps[i]):
                contrib = vjp(g)
                if adj[p] is None:
                    adj[p] = contrib
                else:
                    adj[p] = adj[p] + contrib
        return adj

    def grad(self, out: "Var", wrt: Sequence["Var"]) -> list[np.ndarray]:
        adj = self.backward(out)
        grads = []
        for v in wrt:
            g = adj[v.idx] if v.idx < len(adj) else None
            grads.append(np.zeros_like(v.value) if g is None
                         else np.broadcast_to(g, v.shape).copy())
        return grads


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"

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

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return sum_(self, axis)

    @property
    def T(self):
        return swapaxes(self)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def primitive(value, inputs, vjps):
    """Record ``value`` as a node whose parents are the ``Var`` inputs.

    ``vjps[i]`` maps the output adjoint to the adjoint of ``inputs[i]``.
    Non-``Var`` inputs are constants and their vjp is never called.  When no
    input is a ``Var`` the raw value is returned.
    """
    tape = None
    parents, fns = [], []
    for x, fn in zip(inputs, vjps):
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("mixing tapes")
            parents.append(x.idx)
            fns.append(fn)
    if tape is None:
        return value
    return tape._push(value, parents, fns)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise arithmetic ------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return primitive(av + bv, (a, b), (lambda g: unbroadcast(g, av.shape),
                                       lambda g: unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return primitive(av - bv, (a, b), (lambda g: unbroadcast(g, av.shape),
                                       lambda g: unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return primitive(av * bv, (a, b), (lambda g: unbroadcast(g * bv, av.shape),
                                       lambda g: unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return primitive(out, (a, b), (lambda g: unbroadcast(g / bv, av.shape),
                                   lambda g: unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return primitive(-value_of(a), (a,), (lambda g: -g,))


def square(a):
    av = value_of(a)
    return primitive(av * av, (a,), (lambda g: 2.0 * g * av,))


def exp(a):
    out = np.exp(value_of(a))
    return primitive(out, (a,), (lambda g: g * out,))


def log(a):
    av = value_of(a)
    return primitive(np.log(av), (a,), (lambda g: g / av,))


def tanh_act(x):
    """Elementwise tanh."""
    out = np.tanh(value_of(x))
    return primitive(out, (x,), (lambda g: g * (1.0 - out * out),))


def softplus(x):
    xv = value_of(x)
    out = np.logaddexp(0.0, xv)
    return primitive(out, (x,), (lambda g: g * _expit(xv),))


def log_sigmoid(x):
    """log(1/(1+e^-x)) without overflow."""
    xv = value_of(x)
    out = -np.logaddexp(0.0, -xv)
    return primitive(out, (x,), (lambda g: g * _expit(-xv),))


def clip(x, lo=None, hi=None):
    """Clamp; the adjoint is zero where a bound is active."""
    xv = value_of(x)
    out = np.clip(xv, lo, hi)
    keep = np.ones_like(xv, dtype=bool)
    if lo is not None:
        keep &= xv >= lo
    if hi is not None:
        keep &= xv <= hi
    return primitive(out, (x,), (lambda g: np.where(keep, g, 0.0),))


def maximum(x, floor: float):
    return clip(x, lo=floor)


def _expit(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- reductions and shape ops ---------------------------------------------

def sum_(x, axis=None):
    xv = value_of(x)
    out = np.sum(xv, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return primitive(out, (x,), (vjp,))


def logsumexp(v, axis=-1):
    """Stable log(sum(exp(v))) along ``axis``."""
    vv = value_of(v)
    if vv.size == 0 or vv.shape[axis] == 0:
        raise ValueError("logsumexp of an empty vector")
    m = np.max(vv, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(vv - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def vjp(g):
        return np.expand_dims(g, axis) * (e / s)

    return primitive(out, (v,), (vjp,))


def reshape(x, shape):
    xv = value_of(x)
    return primitive(xv.reshape(shape), (x,), (lambda g: g.reshape(xv.shape),))


def swapaxes(x, a1=-1, a2=-2):
    xv = value_of(x)
    return primitive(np.swapaxes(xv, a1, a2), (x,), (lambda g: np.swapaxes(g, a1, a2),))


def expand_dims(x, axis):
    xv = value_of(x)
    return primitive(np.expand_dims(xv, axis), (x,), (lambda g: g.reshape(xv.shape),))


def getitem(x, key):
    xv = value_of(x)

    def vjp(g):
        out = np.zeros_like(xv)
        np.add.at(out, key, g)
        return out

    return primitive(xv[key], (x,), (vjp,))


def take(x, idx, axis=-1):
    """Gather entries ``idx`` along ``axis`` (duplicates accumulate on backward)."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.intp)
    ax = axis % xv.ndim

    def vjp(g):
        out = np.zeros(xv.shape[:ax] + (xv.shape[ax],) + xv.shape[ax + 1:])
        gm = np.moveaxis(g, ax, -1)
        om = np.moveaxis(out, ax, -1)
        for k, j in enumerate(idx):
            om[..., j] += gm[..., k]
        return out

    return primitive(np.take(xv, idx, axis=ax), (x,), (vjp,))


def concat(xs, axis=-1):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make(k):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[k], bounds[k + 1])
            return g[tuple(sl)]
        return vjp

    return primitive(out, tuple(xs), tuple(make(k) for k in range(len(xs))))


# --- linear algebra --------------------------------------------------------

def matmul(a, b):
    """numpy ``@`` with batching; 1-D operands follow numpy's rules."""
    av, bv = value_of(a), value_of(b)
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    out2 = a2 @ b2

    def ga(g):
        g2 = _restore(g, av, bv)
        r = g2 @ np.swapaxes(b2, -1, -2)
        r = unbroadcast(r, a2.shape)
        return r[0] if av.ndim == 1 else r

    def gb(g):
        g2 = _restore(g, av, bv)
        r = np.swapaxes(a2, -1, -2) @ g2
        r = unbroadcast(r, b2.shape)
        return r[:, 0] if bv.ndim == 1 else r

    out = out2
    if av.ndim == 1:
        out = out[..., 0, :]
    if bv.ndim == 1:
        out = out[..., 0]
    return primitive(out, (a, b), (ga, gb))


def _restore(g, av, bv):
    if av.ndim == 1:
        g = np.expand_dims(g, -2 if bv.ndim > 1 else -1)
    if bv.ndim == 1:
        g = np.expand_dims(g, -1)
    return g


def affine(x, W, b):
    """W x + b; ``x`` may carry leading batch axes (rows)."""
    xv, Wv, bv = value_of(x), value_of(W), value_of(b)
    if Wv.ndim != 2 or xv.shape[-1] != Wv.shape[1] or bv.shape != (Wv.shape[0],):
        raise DimensionError(
            f"affine: x{xv.shape}, W{Wv.shape}, b{bv.shape} do not conform")
    return add(matmul(x, swapaxes(W)), b)


def solve_lower(L, v):
    """z with L z = v for a single lower-triangular L (d, d); v is (..., d)."""
    from scipy.linalg import solve_triangular

    Lv, vv = value_of(L), value_of(v)
    d = Lv.shape[0]
    if Lv.shape != (d, d) or vv.shape[-1] != d:
        raise DimensionError(f"solve_lower: L{Lv.shape}, v{vv.shape}")
    flat = vv.reshape(-1, d)
    z = solve_triangular(Lv, flat.T, lower=True, check_finite=False).T
    z_shaped = z.reshape(vv.shape)

    def gv_flat(g):
        return solve_triangular(Lv, g.reshape(-1, d).T, lower=True, trans="T",
                                check_finite=False).T

    def gv(g):
        return gv_flat(g).reshape(vv.shape)

    def gL(g):
        return -np.tril(gv_flat(g).T @ z)

    return primitive(z_shaped, (L, v), (gL, gv))


# --- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update. Returns new params; mutates ``state``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise DimensionError(f"adam: params{params.shape} vs grad{grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam_step")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)


# --- gradient oracle -------------------------------------------------------

def tape_gradient(f: Callable, x: np.ndarray) -> np.ndarray:
    tape = Tape()
    xv = tape.var(np.array(x, dtype=np.float64))
    out = f(xv)
    if not isinstance(out, Var):
        return np.zeros_like(xv.value)
    return tape.grad(out, [xv])[0]


def finite_difference(f: Callable, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(value_of(f(x)))
        flat[i] = old - h
        fm = float(value_of(f(x)))
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(g: np.ndarray, fd: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |g_i - fd_i| / max(|g_i|, |fd_i|, floor); zero when both vanish."""
    g, fd = np.asarray(g).ravel(), np.asarray(fd).ravel()
    if g.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd) / den))


def grad_check(f: Callable, x, h: float = 1e-6, floor: float = 1e-6) -> float:
    """Max relative error between tape and central-difference gradients of a
    scalar function ``f``; components smaller than ``floor`` are compared
    absolutely against ``floor``."""
    if h <= 0:
        raise ValueError("h must be positive")
    return relative_error(tape_gradient(f, x), finite_difference(f, x, h), floor)


@dataclass
class ParamPack:
    """Fixed-order flattening of a dict of named arrays."""

    shapes: dict[str, tuple] = field(default_factory=dict)

    @classmethod
    def of(cls, arrays: dict[str, np.ndarray]) -> "ParamPack":
        return cls({k: np.shape(v) for k, v in arrays.items()})

    @property
    def size(self) -> int:
        return int(sum(int(np.prod(s)) for s in self.shapes.values()))

    def flatten(self, arrays: dict) -> np.ndarray:
        return np.concatenate([np.asarray(arrays[k], dtype=np.float64).ravel()
                               for k in self.shapes]) if self.shapes else np.zeros(0)

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, i = {}, 0
        for k, s in self.shapes.items():
            n = int(np.prod(s))
            out[k] = flat[i:i + n].reshape(s).copy()
            i += n
        return out
