"""Parameter gradients through ODE solves.

Differentiable dynamics have the signature ``f(s, y, params) -> dy/ds`` where
``params`` is a tuple and the body is written with :mod:`cnodes.diffcore.ops`
so it runs on plain arrays and on tape-recorded Vars alike.
"""

from dataclasses import dataclass, field

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.tape import Tape, Var, value_of, vjp
from cnodes.errors import UnsupportedMethodError
from cnodes.solver.integrate import FIXED_STEP, OdeProblem, SolveStats, fixed_grid, integrate


@dataclass
class AdjointResult:
    grad_params: list
    grad_y0: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    stats: SolveStats
    forward_stats: SolveStats = field(default_factory=SolveStats)


@dataclass
class NfeLog:
    """Running totals of forward and backward solver work."""

    forward: SolveStats = field(default_factory=SolveStats)
    backward: SolveStats = field(default_factory=SolveStats)
    solves: int = 0

    def reset(self):
        self.forward, self.backward, self.solves = SolveStats(), SolveStats(), 0


def _plain(dynamics, params):
    params = tuple(np.asarray(p, dtype=np.float64) for p in params)
    return lambda s, y: value_of(dynamics(s, y, params))


def _pack(parts):
    return np.concatenate([p.ravel() for p in parts])


def _unpack(z, shapes):
    out, pos = [], 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        out.append(z[pos:pos + n].reshape(shape))
        pos += n
    return out


def integrate_adjoint(dynamics, params, y0, s_span, config, loss_grad, y1=None):
    """Continuous adjoint gradients of a terminal loss.

    Solves the augmented system ``[y, a, g]`` backward from s1 to s0 with
    ``da/ds = -a^T df/dy`` and ``dg/ds = -a^T df/dparams``, starting from
    ``a(s1) = loss_grad`` and ``g(s1) = 0``.  The state ``y`` is recomputed
    backward rather than stored, so memory does not grow with the step count.
    If ``y1`` is omitted the forward solve is run first.
    """
    params = tuple(np.asarray(p, dtype=np.float64) for p in params)
    y0 = np.asarray(y0, dtype=np.float64)
    s0, s1 = (float(v) for v in s_span)
    fwd_stats = SolveStats()
    if y1 is None:
        y1, fwd_stats = integrate(OdeProblem(_plain(dynamics, params), (s0, s1), y0), config)
    y1 = np.asarray(y1, dtype=np.float64)
    a1 = np.asarray(loss_grad, dtype=np.float64)
    shapes = [y1.shape, y1.shape] + [p.shape for p in params]
    peak = [0]

    def augmented(s, z):
        y, a, *_ = _unpack(z, shapes)
        with Tape() as tape:
            yv = tape.var(y)
            pv = tuple(tape.var(p) for p in params)
            out = dynamics(s, yv, pv)
            peak[0] = max(peak[0], len(tape))
            if not isinstance(out, Var):
                return _pack([np.asarray(out), np.zeros_like(y)] + [np.zeros_like(p) for p in params])
            grads = vjp(out, a)
        return _pack([out.value, -grads[yv]] + [-grads[p] for p in pv])

    z1 = _pack([y1, a1] + [np.zeros_like(p) for p in params])
    z0, stats = integrate(OdeProblem(augmented, (s1, s0), z1), config)
    stats.peak_tape_nodes = peak[0]
    y_back, a0, *g0 = _unpack(z0, shapes)
    return AdjointResult(list(g0), a0, y_back, y1, stats, fwd_stats)


def _taped_solve(dynamics, y, params, s_span, config, stats):
    def f(s, y):
        out = dynamics(s, y, params)
        stats.nfe += 1
        return out

    grid = fixed_grid(s_span[0], s_span[1], config.h)
    for a, b in zip(grid[:-1], grid[1:]):
        ds = b - a
        if config.method == "euler":
            y = y + ds * f(a, y)
        else:
            k1 = f(a, y)
            k2 = f(a + ds / 2, y + (ds / 2) * k1)
            k3 = f(a + ds / 2, y + (ds / 2) * k2)
            k4 = f(b, y + ds * k3)
            y = y + (ds / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        stats.steps_accepted += 1
    return y


def backprop_through_solver(dynamics, params, y0, s_span, config, loss_grad):
    """Exact gradients of the discrete fixed-step map, by taping every step."""
    if config.method not in FIXED_STEP:
        raise UnsupportedMethodError(
            f"discrete backpropagation needs a fixed-step method, got {config.method!r}"
        )
    stats = SolveStats()
    with Tape() as tape:
        yv = tape.var(y0)
        pv = tuple(tape.var(p) for p in params)
        out = _taped_solve(dynamics, yv, pv, s_span, config, stats)
        stats.peak_tape_nodes = len(tape)
        y1 = value_of(out).copy()
        if not isinstance(out, Var):
            zero = [np.zeros_like(p.value) for p in pv]
            return AdjointResult(zero, np.zeros_like(y1), np.asarray(y0), y1, stats, stats)
        grads = vjp(out, loss_grad)
    return AdjointResult([grads[p] for p in pv], grads[yv], np.asarray(y0), y1, stats, stats)


def odeint(dynamics, y0, params, s_span, config, grad_mode="adjoint", log=None):
    """Differentiable ODE solve usable inside a larger taped computation.

    Returns the state at ``s_span[1]``.  When ``y0`` or any entry of
    ``params`` is a Var, the result is recorded as a single tape node whose
    backward pass runs either the continuous adjoint (``grad_mode="adjoint"``)
    or reverse mode through the stored solver steps (``grad_mode="discrete"``).
    """
    params = tuple(params)
    y0v = np.asarray(value_of(y0), dtype=np.float64)
    pvals = tuple(np.asarray(value_of(p), dtype=np.float64) for p in params)
    inputs = (y0,) + params
    taped = any(isinstance(x, Var) for x in inputs)
    log = log if log is not None else NfeLog()
    log.solves += 1

    if grad_mode == "discrete" and taped:
        if config.method not in FIXED_STEP:
            raise UnsupportedMethodError(
                f"grad_mode='discrete' needs a fixed-step method, got {config.method!r}"
            )
        stats = SolveStats()
        inner = Tape()
        yv = inner.var(y0v)
        pv = tuple(inner.var(p) for p in pvals)
        out = _taped_solve(dynamics, yv, pv, s_span, config, stats)
        stats.peak_tape_nodes = len(inner)
        log.forward = log.forward + stats
        y1 = value_of(out).copy()
        if not isinstance(out, Var):
            return y1
        cache = {}

        def grads_for(g):
            if cache.get("g") is not g:
                cache["g"], cache["r"] = g, vjp(out, g)
            return cache["r"]

        leaves = (yv,) + pv
        fns = [lambda g, leaf=leaf: grads_for(g)[leaf] for leaf in leaves]
        return ops._emit(y1, inputs, fns)

    if grad_mode not in ("adjoint", "discrete"):
        raise UnsupportedMethodError(f"unknown grad_mode {grad_mode!r}")
    y1, stats = integrate(OdeProblem(_plain(dynamics, pvals), s_span, y0v), config)
    log.forward = log.forward + stats
    if not taped:
        return y1
    cache = {}

    def adjoint_for(g):
        if cache.get("g") is not g:
            res = integrate_adjoint(dynamics, pvals, y0v, s_span, config, g, y1=y1)
            log.backward = log.backward + res.stats
            cache["g"], cache["r"] = g, res
        return cache["r"]

    fns = [lambda g: adjoint_for(g).grad_y0]
    fns += [lambda g, i=i: adjoint_for(g).grad_params[i] for i in range(len(params))]
    return ops._emit(y1, inputs, fns)
