"""Reverse-mode automatic differentiation on an append-only operation tape.

A :class:`Var` wraps a float64 ndarray together with its position on a
:class:`Tape`.  Primitive operations (see :mod:`cnodes.diffcore.ops`) append a
node holding the parent indices and one vector-Jacobian closure per parent.
:func:`backward` sweeps the tape in reverse order, so gradients are exact up to
floating point.

Tapes are cheap and meant to be rebuilt for every forward pass.  A tape must
stay on the thread that created it.
"""

import threading
from contextlib import contextmanager

import numpy as np

from cnodes.errors import ContractError

_state = threading.local()


class _Node:
    __slots__ = ("parents", "vjps")

    def __init__(self, parents, vjps):
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes = []
        self._leaves = set()

    def __len__(self):
        return len(self.nodes)

    def var(self, value):
        """Register ``value`` as a differentiable leaf."""
        value = np.array(value, dtype=np.float64)
        idx = len(self.nodes)
        self.nodes.append(_Node((), ()))
        self._leaves.add(idx)
        return Var(value, self, idx)

    def record(self, value, parents, vjps):
        idx = len(self.nodes)
        self.nodes.append(_Node(tuple(p.index for p in parents), tuple(vjps)))
        return Var(value, self, idx)

    def is_leaf(self, v):
        return v.index in self._leaves

    def __enter__(self):
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    """The innermost tape opened with ``with Tape():`` on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def recording():
    """Open a fresh tape for the duration of a block."""
    with Tape() as t:
        yield t


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")
    # Keep numpy from broadcasting over Var as an object scalar.
    __array_ufunc__ = None

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    # arithmetic is bound in ops.py to avoid an import cycle


def value_of(x):
    """Strip the tape from a Var; pass arrays and scalars through."""
    return x.value if isinstance(x, Var) else x


def backward(seed):
    """Gradients of the scalar ``seed`` with respect to every leaf of its tape.

    Returns a dict mapping leaf :class:`Var` objects' indices to gradients;
    use :meth:`Gradients.__getitem__` with the leaf itself.
    """
    if not isinstance(seed, Var):
        raise ContractError("backward() needs a Var recorded on a tape")
    if seed.value.size != 1:
        raise ContractError(f"backward() seed must be scalar, got shape {seed.value.shape}")
    return _sweep(seed.tape, seed.index, np.ones_like(seed.value))


def vjp(output, cotangent):
    """Vector-Jacobian product of a non-scalar ``output`` with ``cotangent``."""
    if not isinstance(output, Var):
        raise ContractError("vjp() needs a Var recorded on a tape")
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != output.value.shape:
        raise ContractError(
            f"cotangent shape {cot.shape} does not match output shape {output.value.shape}"
        )
    return _sweep(output.tape, output.index, cot)


class Gradients:
    """Leaf gradients from one reverse sweep, indexed by the leaf Var."""

    def __init__(self, tape, adjoints):
        self._tape = tape
        self._adj = adjoints

    def __getitem__(self, leaf):
        if leaf.tape is not self._tape:
            raise ContractError("leaf belongs to a different tape")
        g = self._adj.get(leaf.index)
        return np.zeros_like(leaf.value) if g is None else g

    def __contains__(self, leaf):
        return leaf.tape is self._tape and self._tape.is_leaf(leaf)

    def items(self):
        for idx in sorted(self._tape._leaves):
            yield idx, self._adj.get(idx)


def _sweep(tape, start, seed_adj):
    nodes = tape.nodes
    adj = {start: seed_adj}
    leaves = tape._leaves
    for i in range(start, -1, -1):
        g = adj.get(i)
        if g is None:
            continue
        node = nodes[i]
        if not node.parents:
            continue
        for p, fn in zip(node.parents, node.vjps):
            contrib = fn(g)
            prev = adj.get(p)
            adj[p] = contrib if prev is None else prev + contrib
        if i not in leaves:
            del adj[i]
    return Gradients(tape, adj)
