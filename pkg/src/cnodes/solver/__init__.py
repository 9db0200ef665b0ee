"""ODE integration with solver accounting and adjoint sensitivities."""

from cnodes.solver.adjoint import (
    AdjointResult,
    NfeLog,
    backprop_through_solver,
    integrate_adjoint,
    odeint,
)
from cnodes.solver.integrate import METHODS, OdeProblem, SolveStats, SolverConfig, integrate

__all__ = [
    "METHODS", "OdeProblem", "SolverConfig", "SolveStats", "integrate",
    "integrate_adjoint", "backprop_through_solver", "odeint", "AdjointResult", "NfeLog",
]
