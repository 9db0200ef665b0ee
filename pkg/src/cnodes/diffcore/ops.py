"""Differentiable primitives.

Every function here accepts plain arrays or :class:`Var` objects.  With no Var
among the inputs it is ordinary numpy; otherwise the result is recorded on the
inputs' tape together with one vector-Jacobian closure per Var input.
"""

import numpy as np

from cnodes.errors import ContractError
from cnodes.diffcore.tape import Var, value_of

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "matmul", "linear",
    "tanh", "relu", "exp", "log", "sum", "mean", "reshape", "getitem",
    "concat", "softmax", "log_softmax", "swapaxes", "PRIMITIVES",
]


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _emit(value, inputs, vjps):
    """Record ``value`` if any input is a Var; otherwise return it bare."""
    tape = None
    parents, fns = [], []
    for x, fn in zip(inputs, vjps):
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            parents.append(x)
            fns.append(fn)
    if tape is None:
        return value
    return tape.record(value, parents, fns)


def add(a, b):
    av, bv = _as_array(value_of(a)), _as_array(value_of(b))
    return _emit(
        av + bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    av, bv = _as_array(value_of(a)), _as_array(value_of(b))
    return _emit(
        av - bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)),
    )


def mul(a, b):
    av, bv = _as_array(value_of(a)), _as_array(value_of(b))
    return _emit(
        av * bv,
        (a, b),
        (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    av, bv = _as_array(value_of(a)), _as_array(value_of(b))
    out = av / bv
    return _emit(
        out,
        (a, b),
        (lambda g: _unbroadcast(g / bv, av.shape), lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a):
    return _emit(-_as_array(value_of(a)), (a,), (lambda g: -g,))


def power(a, p):
    """Elementwise ``a**p`` for a constant real exponent."""
    av = _as_array(value_of(a))
    return _emit(av**p, (a,), (lambda g: g * p * av ** (p - 1),))


def matmul(a, b):
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    av, bv = _as_array(value_of(a)), _as_array(value_of(b))
    if bv.ndim != 2:
        raise ContractError("matmul expects a 2-D right operand")

    def grad_b(g):
        return av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return _emit(av @ bv, (a, b), (lambda g: g @ bv.T, grad_b))


def linear(x, w, b):
    """Affine layer ``x @ w.T + b`` with ``w`` stored as (out, in)."""
    xv, wv, bv = _as_array(value_of(x)), _as_array(value_of(w)), _as_array(value_of(b))

    def grad_w(g):
        return g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])

    def grad_b(g):
        return g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _emit(xv @ wv.T + bv, (x, w, b), (lambda g: g @ wv, grad_w, grad_b))


def tanh(a):
    out = np.tanh(_as_array(value_of(a)))
    return _emit(out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a):
    av = _as_array(value_of(a))
    mask = av > 0
    return _emit(np.where(mask, av, 0.0), (a,), (lambda g: g * mask,))


def exp(a):
    out = np.exp(_as_array(value_of(a)))
    return _emit(out, (a,), (lambda g: g * out,))


def log(a):
    av = _as_array(value_of(a))
    return _emit(np.log(av), (a,), (lambda g: g / av,))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    av = _as_array(value_of(a))
    out = av.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _emit(out, (a,), (grad,))


def mean(a, axis=None, keepdims=False):
    av = _as_array(value_of(a))
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    av = _as_array(value_of(a))
    return _emit(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def swapaxes(a, ax1, ax2):
    av = _as_array(value_of(a))
    return _emit(np.swapaxes(av, ax1, ax2), (a,), (lambda g: np.swapaxes(g, ax1, ax2),))


def getitem(a, key):
    av = _as_array(value_of(a))

    def grad(g):
        out = np.zeros_like(av)
        np.add.at(out, key, g)
        return out

    return _emit(av[key], (a,), (grad,))


def concat(items, axis=-1):
    vals = [_as_array(value_of(x)) for x in items]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def make(i):
        lo, hi = bounds[i], bounds[i + 1]

        def grad(g):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            return g[tuple(idx)]

        return grad

    return _emit(out, tuple(items), tuple(make(i) for i in range(len(items))))


def softmax(a, axis=-1):
    av = _as_array(value_of(a))
    z = np.exp(av - av.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def grad(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _emit(out, (a,), (grad,))


def log_softmax(a, axis=-1):
    av = _as_array(value_of(a))
    shifted = av - av.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _emit(out, (a,), (lambda g: g - probs * g.sum(axis=axis, keepdims=True),))


def _bind():
    def rev(fn):
        return lambda self, other: fn(other, self)

    Var.__add__ = add
    Var.__radd__ = rev(add)
    Var.__sub__ = sub
    Var.__rsub__ = rev(sub)
    Var.__mul__ = mul
    Var.__rmul__ = rev(mul)
    Var.__truediv__ = div
    Var.__rtruediv__ = rev(div)
    Var.__neg__ = neg
    Var.__pow__ = power
    Var.__matmul__ = matmul
    Var.__getitem__ = getitem
    Var.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)
    Var.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)


_bind()


# Primitive catalogue for gradient checking: name -> (fn over arrays, input
# shapes, sampler for valid inputs).  Kept beside the primitives so a new op
# cannot be added without a check.
def _normal(rng, shape):
    return rng.standard_normal(shape)


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


def _away_from_zero(rng, shape):
    return rng.uniform(0.3, 1.5, shape) * rng.choice([-1.0, 1.0], size=shape)


PRIMITIVES = {
    "add": (lambda a, b: add(a, b), [((3, 4), _normal), ((4,), _normal)]),
    "sub": (lambda a, b: sub(a, b), [((3, 4), _normal), ((3, 1), _normal)]),
    "mul": (lambda a, b: mul(a, b), [((3, 4), _normal), ((3, 4), _normal)]),
    "div": (lambda a, b: div(a, b), [((3, 4), _normal), ((3, 4), _away_from_zero)]),
    "neg": (lambda a: neg(a), [((5,), _normal)]),
    "power": (lambda a: power(a, 3), [((5,), _normal)]),
    "matmul": (lambda a, b: matmul(a, b), [((2, 3, 4), _normal), ((4, 5), _normal)]),
    "linear": (lambda x, w, b: linear(x, w, b), [((3, 4), _normal), ((5, 4), _normal), ((5,), _normal)]),
    "tanh": (lambda a: tanh(a), [((6,), _normal)]),
    "relu": (lambda a: relu(a), [((6,), _away_from_zero)]),
    "exp": (lambda a: exp(a), [((6,), _normal)]),
    "log": (lambda a: log(a), [((6,), _positive)]),
    "sum": (lambda a: sum(a, axis=1), [((3, 4), _normal)]),
    "mean": (lambda a: mean(a, axis=0, keepdims=True), [((3, 4), _normal)]),
    "reshape": (lambda a: reshape(a, (4, 3)), [((3, 4), _normal)]),
    "swapaxes": (lambda a: swapaxes(a, 0, 1), [((3, 4), _normal)]),
    "getitem": (lambda a: getitem(a, (slice(None), slice(1, 3))), [((3, 4), _normal)]),
    "concat": (lambda a, b: concat([a, b], axis=-1), [((3, 2), _normal), ((3, 4), _normal)]),
    "softmax": (lambda a: softmax(a), [((3, 4), _normal)]),
    "log_softmax": (lambda a: log_softmax(a), [((3, 4), _normal)]),
}
