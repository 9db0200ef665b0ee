"""Hand-built characteristic fields with closed-form behaviour.

Both use two characteristic coordinates per latent dimension, read as
(x, t), and a constant Jacobian, so du/ds is constant along each curve and
every explicit solver reproduces the exact flow.
"""

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.tape import value_of
from cnodes.model.field import CharacteristicField, FrozenMap, constant_map
from cnodes.model.model import CnodeModel


def intersecting_model():
    """Scalar C-NODE sending u0 = 0 to 1 and u0 = 1 to 0 at s = 1.

    dx/ds = 1, dt/ds = u0, du/dx = 1, du/dt = -2, hence du/ds = 1 - 2 u0 and
    u(s) = u0 + (1 - 2 u0) s.  The two trajectories cross at s = 1/2.
    """

    def a(cond):
        ones = np.ones(value_of(cond).shape[:-1] + (1,))
        return ops.concat([ones, cond], axis=-1)

    field = CharacteristicField(
        k=2,
        n=1,
        a_net=FrozenMap(a, 2, True, "(1,u0)"),
        jac_net=constant_map([1.0, -2.0], "[1,-2]"),
        a_inputs=("cond",),
    )
    return CnodeModel(field)


def homeomorphism_model(h, n):
    """C-NODE whose time-1 map is ``h`` on R^n.

    Uses k = 2n coordinates with dx/ds = (h(u0), u0) and J = [I, -I], giving
    du/ds = h(u0) - u0.  ``h`` must be written with :mod:`cnodes.diffcore.ops`
    (or plain arithmetic) so the adjoint can differentiate through it.
    """

    def a(cond):
        return ops.concat([h(cond), cond], axis=-1)

    J = np.hstack([np.eye(n), -np.eye(n)])
    field = CharacteristicField(
        k=2 * n,
        n=n,
        a_net=FrozenMap(a, 2 * n, True, "(h(u0),u0)"),
        jac_net=constant_map(J.ravel(), "[I,-I]"),
        a_inputs=("cond",),
    )
    return CnodeModel(field)


def linear_map(A):
    A = np.asarray(A, dtype=np.float64)
    return lambda u: ops.matmul(u, A.T)
