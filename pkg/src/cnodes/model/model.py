"""Three-stage C-NODE: feature extractor, characteristic integration, head."""

from dataclasses import dataclass

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.mlp import MlpSpec, init_params, mlp_forward
from cnodes.diffcore.params import ParamVector
from cnodes.diffcore.tape import value_of
from cnodes.errors import CnodeError, ContractError, DimensionError
from cnodes.model.field import CharacteristicField, FrozenMap, constant_map
from cnodes.solver import NfeLog, SolverConfig, odeint

SEGMENTS = ("theta1", "theta2", "theta3")


@dataclass(frozen=True)
class CnodeModel:
    """``z -> u0 = g(z) -> integrate (x, u) over [0, T] -> head(u_T)``.

    ``g`` or ``head`` set to None means the identity.  The characteristic
    starts at ``x0`` (zeros when None) for every sample, and the conditioning
    input of the field is ``u0`` itself.
    """

    field: CharacteristicField
    g: MlpSpec = None
    head: MlpSpec = None
    T: float = 1.0
    x0: tuple = None

    def __post_init__(self):
        if self.g is not None and self.g.n_out != self.field.n:
            raise DimensionError("feature extractor output", self.field.n, self.g.n_out)
        if self.head is not None and self.head.n_in != self.field.n:
            raise DimensionError("head input", self.field.n, self.head.n_in)
        if self.field.uses_cond and self.field.cond_dim != self.field.n:
            raise DimensionError("conditioning width", self.field.n, self.field.cond_dim)
        x0 = np.zeros(self.field.k) if self.x0 is None else np.asarray(self.x0, dtype=np.float64)
        if x0.shape != (self.field.k,):
            raise DimensionError("x0", (self.field.k,), x0.shape)
        object.__setattr__(self, "x0", tuple(x0.tolist()))

    @property
    def k(self):
        return self.field.k

    @property
    def n(self):
        return self.field.n

    def init_params(self, seed):
        parts = {
            "theta1": init_params(self.g, seed) if self.g is not None else np.zeros(0),
            "theta2": self.field.init(seed + 1),
            "theta3": init_params(self.head, seed + 3) if self.head is not None else np.zeros(0),
        }
        return ParamVector.from_segments(parts)

    def describe(self):
        g = self.g.describe() if self.g is not None else "identity"
        head = self.head.describe() if self.head is not None else "identity"
        return f"cnode(g={g};{self.field.describe()};head={head};T={self.T};x0={list(self.x0)})"

    def dynamics(self):
        """Joint ``[x, u]`` right-hand side with params ``(theta2, cond)``."""
        k = self.k
        field = self.field

        def f(s, y, params):
            theta2, cond = params
            x = ops.getitem(y, (Ellipsis, slice(0, k)))
            u = ops.getitem(y, (Ellipsis, slice(k, None)))
            a, du = field.rates(theta2, x, u, cond if field.uses_cond else None)
            return ops.concat([a, du], axis=-1)

        return f


def node_field(n, hidden=(32,), activation="tanh", time_input=False):
    """Plain NODE as a degenerate field: k = 1, dx/ds = 1, J = f(u) or f(s, u).

    With ``time_input`` the network also sees x, which equals s along the
    curve because x0 = 0 and dx/ds = 1.
    """
    mode = "full" if time_input else "u_only"
    n_in = n + 1 if time_input else n
    jac = MlpSpec((n_in,) + tuple(hidden) + (n,), activation)
    return CharacteristicField(1, n, constant_map([1.0], "one"), jac, mode, a_inputs=("x",))


def _segments(params):
    if isinstance(params, ParamVector):
        return params, params.values
    raise ContractError("params must be a ParamVector")


def split_params(model, params, values):
    """Slice the three segments out of ``values`` (array or Var)."""
    out = []
    for name in SEGMENTS:
        out.append(ops.getitem(values, params.slice(name)))
    return out


def forward(model, params, values, z, solver, grad_mode="adjoint", log=None):
    """Differentiable model pass.  Returns ``(u_T, x_T, u0)``.

    ``values`` is ``params.values`` or a tape leaf standing in for it.
    """
    th1, th2, _ = split_params(model, params, values)
    z_shape = value_of(z).shape
    u0 = z if model.g is None else mlp_forward(model.g, th1, z)
    if value_of(u0).shape[-1:] != (model.n,):
        raise DimensionError("boundary feature width", model.n, value_of(u0).shape[-1:])
    lead = z_shape[:-1]
    x0 = np.broadcast_to(np.asarray(model.x0), lead + (model.k,)).copy()
    y0 = ops.concat([x0, u0], axis=-1)
    cond = u0 if model.field.uses_cond else np.zeros(lead + (model.field.cond_dim,))
    try:
        yT = odeint(model.dynamics(), y0, (th2, cond), (0.0, model.T), solver, grad_mode, log)
    except CnodeError as exc:
        exc.model = model.describe()
        raise
    xT = ops.getitem(yT, (Ellipsis, slice(0, model.k)))
    uT = ops.getitem(yT, (Ellipsis, slice(model.k, None)))
    return uT, xT, u0


def apply_head(model, params, values, uT):
    th3 = ops.getitem(values, params.slice("theta3"))
    return uT if model.head is None else mlp_forward(model.head, th3, uT)


def evolve(model, params, z, solver=SolverConfig()):
    """Integrate the characteristic system for input(s) ``z``.

    Returns ``(u_T, x_T, SolveStats)``; works on one input of shape (w,) or a
    batch of shape (B, w).
    """
    _segments(params)
    log = NfeLog()
    uT, xT, _ = forward(model, params, params.values, np.asarray(z, dtype=np.float64), solver, log=log)
    return uT, xT, log.forward


def evolve_backward(model, params, uT, xT, cond, solver=SolverConfig()):
    """Integrate the joint system from s = T back to s = 0.

    The conditioning input is not recoverable from the terminal state, so it
    is passed in explicitly.  Returns ``(u_0, x_0, SolveStats)``.
    """
    uT = np.asarray(uT, dtype=np.float64)
    y = np.concatenate([np.asarray(xT, dtype=np.float64), uT], axis=-1)
    if cond is None:
        cond = np.zeros(uT.shape[:-1] + (model.field.cond_dim,))
    log = NfeLog()
    th2 = params.segment("theta2")
    y0 = odeint(model.dynamics(), y, (th2, np.asarray(cond, dtype=np.float64)), (model.T, 0.0), solver, log=log)
    return y0[..., model.k:], y0[..., :model.k], log.forward


def predict(model, params, z, solver=SolverConfig()):
    uT, _, _ = evolve(model, params, z, solver)
    return apply_head(model, params, params.values, uT)


__all__ = [
    "CnodeModel", "node_field", "forward", "apply_head", "evolve", "evolve_backward", "predict", "split_params",
    "FrozenMap", "SEGMENTS",
]
