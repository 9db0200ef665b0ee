"""Regression of u u_x + u_t = u on [1, 2] x [0, 1] with learned characteristics.

The C-NODE predictor uses four networks.  NN4 gives the boundary profile
u(iota, 0), NN3 maps that boundary value to the characteristic velocity
c = (c0, c1), and the curve through (x, t) is x(s) = iota + c0 s, t(s) = s.
The foot iota solves iota = x - c0(NN4(iota)) t by fixed-point iteration,
and the prediction is NN4(iota) plus the integral over s in [0, t] of
NN2 c0 + NN1 c1 evaluated on the curve.  The baseline integrates a single
network NN1(x, t) in t from zero.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.mlp import MlpSpec, init_params, mlp_forward, mlp_jvp
from cnodes.diffcore.optim import AdamConfig
from cnodes.diffcore.params import ParamVector
from cnodes.diffcore.tape import value_of
from cnodes.errors import TaskError
from cnodes.model.train import TrainConfig, fit, mse
from cnodes.solver import NfeLog, SolverConfig, odeint
from cnodes.tasks.data import percent_deviation

log = logging.getLogger(__name__)

PDE_SOLVER = SolverConfig("rk4", h=0.25)


@dataclass(frozen=True)
class PdeNets:
    nn1: MlpSpec = MlpSpec((2, 16, 16, 1))
    nn2: MlpSpec = MlpSpec((2, 16, 16, 1))
    nn3: MlpSpec = MlpSpec((1, 18, 2))
    nn4: MlpSpec = MlpSpec((1, 20, 1))

    @property
    def n_params(self):
        return sum(spec.n_params for spec in (self.nn1, self.nn2, self.nn3, self.nn4))

    def init(self, seed):
        specs = {"nn1": self.nn1, "nn2": self.nn2, "nn3": self.nn3, "nn4": self.nn4}
        return ParamVector.from_segments({k: init_params(s, seed + i) for i, (k, s) in enumerate(specs.items())})


@dataclass(frozen=True)
class NodePdeNet:
    nn1: MlpSpec = MlpSpec((2, 32, 32, 1))

    @property
    def n_params(self):
        return self.nn1.n_params

    def init(self, seed):
        return ParamVector.from_segments({"nn1": init_params(self.nn1, seed)})


@dataclass(frozen=True)
class PdeFitConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=300, batch_size=50, adam=AdamConfig(lr=1e-2), solver=PDE_SOLVER, grad_mode="discrete"))
    tol: float = 1e-8
    max_iter: int = 100
    max_flagged: float = 0.05


@dataclass
class PdeFitResult:
    params: ParamVector
    history: list
    test_deviation: float
    train_deviation: float
    n_params: int
    flagged: int = 0
    max_iterations: int = 0
    nfe: dict = field(default_factory=dict)


def _seg(params, values, name):
    return ops.getitem(values, params.slice(name))


def _velocity(nets, th3, th4, iota):
    u0 = mlp_forward(nets.nn4, th4, iota)
    return u0, mlp_forward(nets.nn3, th3, u0)


def fixed_point(nets, params, x, t, tol=1e-8, max_iter=100):
    """Solve iota = x - c0(NN4(iota)) t per sample.

    Returns ``(iota, iterations, converged)`` with shapes (B, 1), (B,), (B,).
    """
    th3, th4 = params.segment("nn3"), params.segment("nn4")
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    iota = x.copy()
    iters = np.zeros(len(x), dtype=np.int64)
    done = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        _, c = _velocity(nets, th3, th4, iota)
        nxt = x - c[:, :1] * t
        step = np.abs(nxt - iota)[:, 0]
        iters += ~done
        with np.errstate(invalid="ignore"):
            iota = np.where(done[:, None], iota, nxt)
            done |= step < tol
        if done.all():
            break
    return iota, iters, done & np.isfinite(iota[:, 0])


def _map_slope(nets, th3, th4, iota, t):
    """dF/diota for F(iota) = x - c0(NN4(iota)) t."""
    ones = np.ones(iota.shape[:-1] + (1, 1))
    u0, du0 = mlp_jvp(nets.nn4, th4, iota, ones)
    _, dc = mlp_jvp(nets.nn3, th3, u0, du0)
    return -dc[..., 0, :1] * t


def _quadrature_dynamics(nets):
    def f(tau, y, prm):
        th1, th2, iota, c, t = prm
        c0 = ops.getitem(c, (Ellipsis, slice(0, 1)))
        c1 = ops.getitem(c, (Ellipsis, slice(1, 2)))
        ts = t * tau
        inp = ops.concat([iota + c0 * ts, ts], axis=-1)
        return t * (mlp_forward(nets.nn2, th2, inp) * c0 + mlp_forward(nets.nn1, th1, inp) * c1)

    return f


def cnode_predict_values(nets, params, values, x, t, solver=PDE_SOLVER, grad_mode="discrete",
                         nfe=None, tol=1e-8, max_iter=100):
    """Differentiable four-step prediction.  Returns ``(pred, converged, iterations)``.

    The foot iota enters the tape through one Newton correction around the
    converged fixed point, whose value is iota itself and whose derivative is
    the implicit-function derivative of the fixed point.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    iota, iters, ok = fixed_point(nets, params, x, t, tol, max_iter)
    th1, th2, th3, th4 = (_seg(params, values, k) for k in ("nn1", "nn2", "nn3", "nn4"))
    iota = np.where(ok[:, None], iota, x)
    slope = _map_slope(nets, params.segment("nn3"), params.segment("nn4"), iota, t)
    _, c_star = _velocity(nets, th3, th4, iota)
    resid = x - ops.getitem(c_star, (Ellipsis, slice(0, 1))) * t - iota
    iota_v = iota + resid * (1.0 / (1.0 - slope))
    u0, c = _velocity(nets, th3, th4, iota_v)
    zero = np.zeros_like(x)
    du = odeint(_quadrature_dynamics(nets), zero, (th1, th2, iota_v, c, t), (0.0, 1.0), solver, grad_mode, nfe)
    return u0 + du, ok, iters


def _node_dynamics(spec):
    def f(tau, y, prm):
        th, x, t = prm
        ts = t * tau
        return t * mlp_forward(spec, th, ops.concat([x, ts], axis=-1))

    return f


def node_predict_values(net, params, values, x, t, solver=PDE_SOLVER, grad_mode="discrete", nfe=None):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    th = _seg(params, values, "nn1")
    return odeint(_node_dynamics(net.nn1), np.zeros_like(x), (th, x, t), (0.0, 1.0), solver, grad_mode, nfe)


def cnode_predict(nets, params, xt, config=PdeFitConfig()):
    xt = np.asarray(xt, dtype=np.float64)
    pred, ok, iters = cnode_predict_values(nets, params, params.values, xt[:, 0], xt[:, 1], config.train.solver,
                                           tol=config.tol, max_iter=config.max_iter)
    return value_of(pred)[:, 0], ok, iters


def node_predict(net, params, xt, config=PdeFitConfig()):
    xt = np.asarray(xt, dtype=np.float64)
    return value_of(node_predict_values(net, params, params.values, xt[:, 0], xt[:, 1], config.train.solver))[:, 0]


def _check_flagged(ok, limit, where):
    bad = int(np.sum(~ok))
    if bad > limit * len(ok):
        raise TaskError(f"fixed-point iteration failed on {bad}/{len(ok)} {where} samples")
    return bad


def pde_fit(task, nets=PdeNets(), config=PdeFitConfig(), params=None):
    """Train the four-network C-NODE predictor by MSE and report test deviation (%)."""
    params = nets.init(config.train.seed) if params is None else params
    xt, u = task.train_xt, task.train_u
    nfe = NfeLog()
    stats = {"flagged": 0, "max_iter": 0}

    def objective(values, idx):
        current = params.with_values(value_of(values))
        pred, ok, iters = cnode_predict_values(nets, current, values, xt[idx, 0], xt[idx, 1],
                                               config.train.solver, config.train.grad_mode, nfe,
                                               config.tol, config.max_iter)
        stats["max_iter"] = max(stats["max_iter"], int(iters.max()))
        bad = int(np.sum(~ok))
        stats["flagged"] += bad
        _check_flagged(ok, config.max_flagged, "batch")
        keep = np.flatnonzero(ok)
        loss = mse(ops.getitem(pred, (keep, slice(None))), u[idx][keep, None])
        return loss, float(value_of(loss))

    params, history = fit(objective, params, len(xt), config.train, nfe)
    log.info("pde_fit: max fixed-point iterations %d, flagged %d", stats["max_iter"], stats["flagged"])
    pred_te, ok_te, it_te = cnode_predict(nets, params, task.test_xt, config)
    _check_flagged(ok_te, config.max_flagged, "test")
    pred_tr, _, _ = cnode_predict(nets, params, xt, config)
    return PdeFitResult(
        params, history,
        percent_deviation(pred_te[ok_te], task.test_u[ok_te]),
        percent_deviation(pred_tr, u),
        nets.n_params, stats["flagged"], max(stats["max_iter"], int(it_te.max())),
        {"forward": nfe.forward.to_json(), "adjoint": nfe.backward.to_json()},
    )


def node_pde_baseline(task, net=NodePdeNet(), config=PdeFitConfig(), params=None):
    """Fit u(x, t) = integral of NN1(x, s) over s in [0, t]."""
    params = net.init(config.train.seed) if params is None else params
    xt, u = task.train_xt, task.train_u
    nfe = NfeLog()

    def objective(values, idx):
        pred = node_predict_values(net, params, values, xt[idx, 0], xt[idx, 1], config.train.solver,
                                   config.train.grad_mode, nfe)
        loss = mse(pred, u[idx, None])
        return loss, float(value_of(loss))

    params, history = fit(objective, params, len(xt), config.train, nfe)
    return PdeFitResult(
        params, history,
        percent_deviation(node_predict(net, params, task.test_xt, config), task.test_u),
        percent_deviation(node_predict(net, params, xt, config), u),
        net.n_params,
        nfe={"forward": nfe.forward.to_json(), "adjoint": nfe.backward.to_json()},
    )
