"""Learned characteristic fields.

A field pairs a characteristic velocity ``a = dx/ds`` with the spatial
Jacobian ``J = du/dx`` (n x k); along the curve ``du/ds = J a``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.mlp import MlpSpec, init_params, mlp_forward, mlp_jvp
from cnodes.diffcore.tape import value_of
from cnodes.errors import DimensionError

BALANCE_MODES = ("u_only", "full")
A_INPUTS = ("x", "u", "cond")


@dataclass(frozen=True)
class FrozenMap:
    """A fixed, parameter-free map used in place of a network.

    ``fn`` receives the same concatenated input a network would and must be
    written with :mod:`cnodes.diffcore.ops`.  ``u_free`` declares that the
    output does not depend on the u slots of that input, which is all the
    forward-mode trace code needs to know about it.
    """

    fn: Callable
    n_out: int
    u_free: bool = True
    name: str = "frozen"

    n_params = 0

    def describe(self):
        return self.name


def constant_map(values, name=None):
    values = np.asarray(values, dtype=np.float64)

    def fn(inp):
        lead = value_of(inp).shape[:-1]
        return np.broadcast_to(values, lead + values.shape).copy()

    return FrozenMap(fn, values.size, True, name or f"const{values.tolist()}")


def apply_net(net, params, inp):
    if isinstance(net, FrozenMap):
        return net.fn(inp)
    return mlp_forward(net, params, inp)


@dataclass(frozen=True)
class CharacteristicField:
    """Learned characteristic velocity and Jacobian.

    ``a_net`` sees the concatenation of the sources named in ``a_inputs``
    (any of x, u, cond, in that order).  ``jac_net`` sees u alone in
    ``u_only`` balance mode, or ``(x, u)`` in ``full`` mode, and returns the
    n x k Jacobian flattened row-major.
    """

    k: int
    n: int
    a_net: object
    jac_net: object
    balance_mode: str = "u_only"
    a_inputs: tuple = ("x", "u", "cond")
    cond_dim: int = None

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be >= 1")
        if self.balance_mode not in BALANCE_MODES:
            raise ValueError(f"balance_mode must be one of {BALANCE_MODES}")
        ins = tuple(self.a_inputs)
        if not ins or any(s not in A_INPUTS for s in ins) or len(set(ins)) != len(ins):
            raise ValueError(f"a_inputs must be a non-empty subset of {A_INPUTS}")
        object.__setattr__(self, "a_inputs", tuple(s for s in A_INPUTS if s in ins))
        if self.cond_dim is None:
            object.__setattr__(self, "cond_dim", self.n)
        if self.a_net.n_out != self.k:
            raise DimensionError("a_net output width", self.k, self.a_net.n_out)
        if self.jac_net.n_out != self.n * self.k:
            raise DimensionError("jac_net output width", self.n * self.k, self.jac_net.n_out)
        for net, width in ((self.a_net, self.a_in_width), (self.jac_net, self.jac_in_width)):
            if isinstance(net, MlpSpec) and net.n_in != width:
                raise DimensionError("network input width", width, net.n_in)

    @property
    def a_in_width(self):
        sizes = {"x": self.k, "u": self.n, "cond": self.cond_dim}
        return sum(sizes[s] for s in self.a_inputs)

    @property
    def jac_in_width(self):
        return self.n if self.balance_mode == "u_only" else self.k + self.n

    @property
    def uses_cond(self):
        return "cond" in self.a_inputs

    @property
    def n_params(self):
        return self.a_net.n_params + self.jac_net.n_params

    def split(self, theta):
        na = self.a_net.n_params
        return ops.getitem(theta, slice(0, na)), ops.getitem(theta, slice(na, self.n_params))

    def init(self, seed):
        parts = [init_params(net, seed + i) for i, net in enumerate((self.a_net, self.jac_net))
                 if isinstance(net, MlpSpec)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def a_input(self, x, u, cond):
        src = {"x": x, "u": u, "cond": cond}
        parts = [src[s] for s in self.a_inputs]
        return parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)

    def jac_input(self, x, u):
        return u if self.balance_mode == "u_only" else ops.concat([x, u], axis=-1)

    def rates(self, theta, x, u, cond=None):
        """Return ``(dx/ds, du/ds)`` at a batch of points."""
        self._check(x, u, cond)
        pa, pj = self.split(theta)
        a = apply_net(self.a_net, pa, self.a_input(x, u, cond))
        jac = apply_net(self.jac_net, pj, self.jac_input(x, u))
        return a, self.contract(jac, a)

    def contract(self, jac, a):
        """``J a`` with J given flattened as (..., n*k)."""
        lead = value_of(a).shape[:-1]
        J = ops.reshape(jac, lead + (self.n, self.k))
        return ops.sum(J * ops.reshape(a, lead + (1, self.k)), axis=-1)

    def describe(self):
        return (
            f"field(k={self.k};n={self.n};a={self.a_net.describe()};J={self.jac_net.describe()};"
            f"balance={self.balance_mode};a_inputs={','.join(self.a_inputs)})"
        )

    def _check(self, x, u, cond):
        xs, us = value_of(x).shape, value_of(u).shape
        if xs[-1:] != (self.k,):
            raise DimensionError("characteristic coordinate width", self.k, xs[-1:])
        if us[-1:] != (self.n,):
            raise DimensionError("latent width", self.n, us[-1:])
        if self.uses_cond:
            if cond is None:
                raise DimensionError("conditioning input", self.cond_dim, None)
            cs = value_of(cond).shape
            if cs[-1:] != (self.cond_dim,):
                raise DimensionError("conditioning width", self.cond_dim, cs[-1:])

    def rates_jvp(self, theta, x, u, cond, u_tangents):
        """``(dx/ds, du/ds, d(du/ds)/du . v)`` for tangents v of shape (..., m, n).

        The derivative holds x and cond fixed.  Returns the directional
        derivatives with shape (..., m, n).
        """
        self._check(x, u, cond)
        pa, pj = self.split(theta)
        lead = value_of(u).shape[:-1]
        m = value_of(u_tangents).shape[-2]

        def lift(inp_sources, widths):
            parts = []
            for src, w in zip(inp_sources, widths):
                if src == "u":
                    parts.append(u_tangents)
                else:
                    parts.append(np.zeros(lead + (m, w)))
            return parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)

        widths = {"x": self.k, "u": self.n, "cond": self.cond_dim}
        a_src = self.a_inputs
        a_in = self.a_input(x, u, cond)
        if isinstance(self.a_net, FrozenMap):
            if not self.a_net.u_free and "u" in a_src:
                raise NotImplementedError("frozen a_net with u-dependence has no tangent rule")
            a, da = apply_net(self.a_net, pa, a_in), None
        elif "u" in a_src:
            a, da = mlp_jvp(self.a_net, pa, a_in, lift(a_src, [widths[s] for s in a_src]))
        else:
            a, da = mlp_forward(self.a_net, pa, a_in), None

        j_src = ("u",) if self.balance_mode == "u_only" else ("x", "u")
        j_in = self.jac_input(x, u)
        if isinstance(self.jac_net, FrozenMap):
            if not self.jac_net.u_free:
                raise NotImplementedError("frozen jac_net with u-dependence has no tangent rule")
            jac, djac = apply_net(self.jac_net, pj, j_in), None
        else:
            jac, djac = mlp_jvp(self.jac_net, pj, j_in, lift(j_src, [widths[s] for s in j_src]))

        du = self.contract(jac, a)
        a_m = ops.reshape(a, lead + (1, 1, self.k))
        terms = []
        if djac is not None:
            Jt = ops.reshape(djac, lead + (m, self.n, self.k))
            terms.append(ops.sum(Jt * a_m, axis=-1))
        if da is not None:
            J = ops.reshape(jac, lead + (1, self.n, self.k))
            terms.append(ops.sum(J * ops.reshape(da, lead + (m, 1, self.k)), axis=-1))
        if not terms:
            ddu = np.zeros(lead + (m, self.n))
        else:
            ddu = terms[0] if len(terms) == 1 else terms[0] + terms[1]
        return a, du, ddu


def du_ds(field, theta, x, u, cond=None):
    """The characteristic ODE right-hand side ``du/ds = (J_x u)(x, u) . a(x, u, cond)``."""
    return field.rates(theta, x, u, cond)[1]
