"""Continuous normalizing flows driven by a characteristic field.

The flow state is ``[x, u, delta]`` with ``d(delta)/ds = -tr(d(du/ds)/du)``.
Likelihoods are evaluated by integrating from the data at s = T back to the
base density at s = 0.  Because x(T) cannot be read off a data point, the
velocity network of a flow field may depend on x alone; the curve x(s) is
then shared by every sample and is integrated once per evaluation.
"""

import math
from dataclasses import dataclass

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.tape import Var, value_of
from cnodes.errors import ConfigError, DimensionError
from cnodes.model.field import apply_net
from cnodes.model.train import fit
from cnodes.solver import NfeLog, SolverConfig, odeint

TRACE_MODES = ("exact", "hutchinson")
PROBE_DISTS = ("rademacher", "gaussian")
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class BaseDensity:
    n: int

    def log_prob(self, u):
        if not isinstance(u, Var):
            u = np.asarray(u, dtype=np.float64)
        return -0.5 * ops.sum(u * u, axis=-1) - 0.5 * self.n * LOG_2PI

    def sample(self, count, rng):
        return rng.standard_normal((count, self.n))

    @property
    def entropy(self):
        return 0.5 * self.n * (1.0 + LOG_2PI)


@dataclass(frozen=True)
class TraceEstimator:
    mode: str = "exact"
    probes: int = 1
    probe_dist: str = "rademacher"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in TRACE_MODES:
            raise ConfigError(f"trace mode must be one of {TRACE_MODES}")
        if self.probe_dist not in PROBE_DISTS:
            raise ConfigError(f"probe_dist must be one of {PROBE_DISTS}")
        if int(self.probes) != self.probes or self.probes < 1:
            raise ConfigError("probes must be a positive integer")

    def rng(self):
        return np.random.default_rng(self.seed)

    def directions(self, lead, n, rng=None):
        """Tangent directions of shape lead + (m, n)."""
        if self.mode == "exact":
            return np.broadcast_to(np.eye(n), tuple(lead) + (n, n)).copy()
        return draw_probes(rng or self.rng(), tuple(lead) + (self.probes, n), self.probe_dist)


def draw_probes(rng, shape, dist="rademacher"):
    if dist == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(shape)


def hutchinson_trace(matvec, dim, probes, dist="rademacher", rng=None):
    """Estimate tr(A) as the mean of e^T A e over ``probes`` random vectors.

    ``matvec`` maps a (probes, dim) block of vectors to A applied to each row.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = draw_probes(rng, (probes, dim), dist)
    return float(np.mean(np.sum(eps * np.asarray(matvec(eps)), axis=-1)))


def quad_trace(ddu, directions, exact):
    """Trace from directional derivatives ddu[..., j, :] = M d_j."""
    if exact:
        n = value_of(ddu).shape[-1]
        return ops.sum(ddu * np.eye(n), axis=(-2, -1))
    m = value_of(directions).shape[-2]
    return ops.sum(ddu * directions, axis=(-2, -1)) * (1.0 / m)


@dataclass
class FlowState:
    u: np.ndarray
    x: np.ndarray
    delta_logp: object = 0.0

    def pack(self):
        u = np.asarray(self.u, dtype=np.float64)
        x = np.broadcast_to(np.asarray(self.x, dtype=np.float64), u.shape[:-1] + (np.shape(self.x)[-1],))
        d = np.broadcast_to(np.asarray(self.delta_logp, dtype=np.float64), u.shape[:-1])[..., None]
        return np.concatenate([x, u, d], axis=-1)

    @classmethod
    def unpack(cls, y, k):
        y = np.asarray(y)
        return cls(u=y[..., k:-1], x=y[..., :k], delta_logp=y[..., -1])


def _check_flow_field(field):
    if field.a_inputs != ("x",):
        raise ConfigError("a flow field's velocity network must take x as its only input")


def flow_dynamics(field, theta, state, estimator=TraceEstimator(), directions=None):
    """Rates of a :class:`FlowState`: ``(dx/ds, du/ds, d(delta)/ds)``.

    The trace differentiates du/ds with respect to the instantaneous u with
    x held fixed.  ``directions`` overrides the estimator's probe draw.
    """
    u, x = state.u, state.x
    lead = value_of(u).shape[:-1]
    if directions is None:
        directions = estimator.directions(lead, field.n)
    a, du, ddu = field.rates_jvp(theta, x, u, None, directions)
    return a, du, -quad_trace(ddu, directions, estimator.mode == "exact")


def joint_dynamics(model, estimator, directions):
    """ODE right-hand side over the packed ``[x, u, delta]`` state."""
    field, k = model.field, model.k
    _check_flow_field(field)

    def f(s, y, params):
        (theta2,) = params
        x = ops.getitem(y, (Ellipsis, slice(0, k)))
        u = ops.getitem(y, (Ellipsis, slice(k, k + field.n)))
        a, du, dlogp = flow_dynamics(field, theta2, FlowState(u, x), estimator, directions)
        lead = value_of(u).shape[:-1]
        return ops.concat([a, du, ops.reshape(dlogp, lead + (1,))], axis=-1)

    return f


def curve_dynamics(model):
    field = model.field
    _check_flow_field(field)

    def f(s, x, params):
        pa, _ = field.split(params[0])
        return apply_net(field.a_net, pa, x)

    return f


def _theta2(model, params, values):
    return ops.getitem(values, params.slice("theta2"))


def _check_points(model, v):
    shape = value_of(v).shape
    if shape[-1:] != (model.n,):
        raise DimensionError("data point width", model.n, shape[-1:])
    return shape[:-1]


def curve_end(model, params, values, solver, grad_mode="adjoint", log=None):
    """x(T) of the shared characteristic curve."""
    x0 = np.asarray(model.x0)
    return odeint(curve_dynamics(model), x0, (_theta2(model, params, values),), (0.0, model.T),
                  solver, grad_mode, log)


def log_prob_values(model, params, values, v, solver, estimator, rng=None, grad_mode="adjoint", log=None):
    """Differentiable log-density of data points ``v`` (shape (..., n))."""
    lead = _check_points(model, v)
    theta2 = _theta2(model, params, values)
    # The shared curve is cheap and is left out of the NFE log.
    xT = curve_end(model, params, values, solver, grad_mode)
    xT_b = ops.reshape(xT, (1,) * len(lead) + (model.k,)) + np.zeros(tuple(lead) + (model.k,))
    yT = ops.concat([xT_b, v, np.zeros(tuple(lead) + (1,))], axis=-1)
    dirs = estimator.directions(lead, model.n, rng)
    y0 = odeint(joint_dynamics(model, estimator, dirs), yT, (theta2,), (model.T, 0.0), solver, grad_mode, log)
    u0 = ops.getitem(y0, (Ellipsis, slice(model.k, model.k + model.n)))
    integral = ops.getitem(y0, (Ellipsis, -1))
    return BaseDensity(model.n).log_prob(u0) - integral


def log_prob(model, params, v, solver=SolverConfig(), estimator=TraceEstimator()):
    """Log-density of data point(s) ``v`` under the flow (nats)."""
    v = np.asarray(v, dtype=np.float64)
    return value_of(log_prob_values(model, params, params.values, v, solver, estimator))


def push_forward(model, params, w, solver=SolverConfig(), estimator=TraceEstimator()):
    """Map base points ``w`` to data space.

    Returns ``(v, delta)`` where ``delta = log p(v) - log p_base(w)``, the
    accumulated change in log-density along the flow.
    """
    w = np.asarray(w, dtype=np.float64)
    lead = _check_points(model, w)
    theta2 = params.segment("theta2")
    dirs = estimator.directions(lead, model.n)
    y0 = FlowState(w, np.asarray(model.x0), 0.0).pack()
    yT = odeint(joint_dynamics(model, estimator, dirs), y0, (theta2,), (0.0, model.T), solver)
    state = FlowState.unpack(yT, model.k)
    return state.u, state.delta_logp


def pull_back(model, params, v, solver=SolverConfig()):
    """Inverse map: integrate data points from s = T back to the base."""
    v = np.asarray(v, dtype=np.float64)
    lead = _check_points(model, v)
    theta2 = params.segment("theta2")
    xT = curve_end(model, params, params.values, solver)
    y = np.concatenate([np.broadcast_to(xT, tuple(lead) + (model.k,)), v], axis=-1)
    field, k = model.field, model.k

    def f(s, y, prm):
        x = ops.getitem(y, (Ellipsis, slice(0, k)))
        u = ops.getitem(y, (Ellipsis, slice(k, None)))
        a, du = field.rates(prm[0], x, u)
        return ops.concat([a, du], axis=-1)

    y0 = odeint(f, y, (theta2,), (model.T, 0.0), solver)
    return y0[..., k:]


def sample(model, params, count, solver=SolverConfig(), seed=0):
    """Draw ``count`` points: base draws pushed forward from s = 0 to T."""
    rng = np.random.default_rng(seed)
    w = BaseDensity(model.n).sample(count, rng)
    v, _ = push_forward(model, params, w, solver, TraceEstimator("exact"))
    return v


def gaussian_nll(data):
    """Mean NLL (nats) of ``data`` under its own maximum-likelihood Gaussian."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[-1]
    cov = np.atleast_2d(np.cov(data, rowvar=False, bias=True))
    _, logdet = np.linalg.slogdet(cov)
    return 0.5 * (n * (1.0 + LOG_2PI) + logdet)


def bits_per_dim(nll_nats, n):
    return nll_nats / (n * math.log(2.0))


def train_cnf(model, params, data, config, estimator=TraceEstimator("hutchinson")):
    """Maximum-likelihood fit of the flow to ``data`` (shape (N, n)).

    Gradients follow ``config.grad_mode``.  Hutchinson probes are redrawn for
    every batch and held fixed within its solves.  History rows carry
    ``epoch, mean_nll_nats, nfe_forward, nfe_adjoint``.
    """
    data = np.asarray(data, dtype=np.float64)
    _check_points(model, data)
    _check_flow_field(model.field)
    nfe = NfeLog()
    rng = estimator.rng()

    def objective(values, idx):
        lp = log_prob_values(model, params, values, data[idx], config.solver, estimator, rng,
                             config.grad_mode, nfe)
        loss = -ops.mean(lp)
        return loss, float(value_of(loss))

    params, hist = fit(objective, params, len(data), config, nfe)
    rows = [{"epoch": h["epoch"], "mean_nll_nats": h["loss"], "nfe_forward": h["nfe_forward"],
             "nfe_adjoint": h["nfe_adjoint"]} for h in hist]
    return params, rows
