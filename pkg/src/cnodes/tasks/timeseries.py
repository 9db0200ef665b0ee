"""Extrapolation of u(x, t) in t with x hidden from the model.

Both models start from the anchor u(1, 0) and integrate over s in [0, 1]
with the right-hand side scaled by the sample's t, which is the same as
integrating in t up to the sample's time.  The NODE integrates du/dt =
f(u, t); the C-NODE integrates k characteristic coordinates with
du/ds = J(u) a(z, u, u0).
"""

from dataclasses import dataclass, field

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.mlp import MlpSpec
from cnodes.diffcore.optim import AdamConfig
from cnodes.diffcore.tape import value_of
from cnodes.errors import ConfigError
from cnodes.model.field import CharacteristicField
from cnodes.model.model import CnodeModel, node_field
from cnodes.model.train import TrainConfig, fit, mse
from cnodes.solver import NfeLog, SolverConfig, odeint
from cnodes.tasks.data import percent_deviation

KINDS = ("node", "cnode")


@dataclass(frozen=True)
class TimeSeriesConfig:
    k: int = 8
    # Widths give 9697 (NODE) and 9626 (C-NODE) parameters.
    node_hidden: tuple = (96, 96)
    a_hidden: tuple = (62, 62)
    jac_hidden: tuple = (62, 62)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=100, batch_size=50, adam=AdamConfig(lr=1e-3), solver=SolverConfig(rtol=1e-5, atol=1e-7)))


def build_model(kind, config=TimeSeriesConfig()):
    if kind == "node":
        return CnodeModel(node_field(1, config.node_hidden, time_input=True))
    if kind == "cnode":
        k = config.k
        fld = CharacteristicField(
            k, 1,
            MlpSpec((k + 2,) + tuple(config.a_hidden) + (k,)),
            MlpSpec((1,) + tuple(config.jac_hidden) + (k,)),
            "u_only",
        )
        return CnodeModel(fld)
    raise ConfigError(f"model kind must be one of {KINDS}")


def _scaled_dynamics(model):
    f = model.dynamics()

    def g(s, y, prm):
        theta2, cond, scale = prm
        return f(s, y, (theta2, cond)) * scale

    return g


def predict_values(model, params, values, t, anchor, solver, grad_mode="adjoint", nfe=None):
    """u at times ``t`` (shape (B,)) starting from u = anchor at t = 0."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    u0 = np.full_like(t, anchor)
    y0 = np.concatenate([np.broadcast_to(np.asarray(model.x0), (len(t), model.k)), u0], axis=-1)
    theta2 = ops.getitem(values, params.slice("theta2"))
    cond = u0 if model.field.uses_cond else np.zeros((len(t), model.field.cond_dim))
    yT = odeint(_scaled_dynamics(model), y0, (theta2, cond, t), (0.0, 1.0), solver, grad_mode, nfe)
    return ops.getitem(yT, (Ellipsis, slice(model.k, model.k + 1)))


def predict(model, params, t, anchor, solver=SolverConfig()):
    return value_of(predict_values(model, params, params.values, t, anchor, solver))[:, 0]


@dataclass
class TimeSeriesResult:
    kind: str
    params: object
    history: list
    deviations: dict
    n_params: int


def timeseries_eval(kind, task, config=TimeSeriesConfig()):
    """Train on t in [0, 1] and report percent deviation on every test window."""
    model = build_model(kind, config)
    params = model.init_params(config.train.seed)
    tc = config.train
    nfe = NfeLog()

    def objective(values, idx):
        pred = predict_values(model, params, values, task.train_t[idx], task.anchor, tc.solver, tc.grad_mode, nfe)
        loss = mse(pred, task.train_u[idx, None])
        return loss, float(value_of(loss))

    params, history = fit(objective, params, len(task.train_t), tc, nfe)
    devs = {}
    for window, (tw, uw) in task.windows.items():
        devs[window] = percent_deviation(predict(model, params, tw, task.anchor, tc.solver), uw)
    return TimeSeriesResult(kind, params, history, devs, params.values.size)
