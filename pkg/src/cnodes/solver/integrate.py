"""Explicit initial-value integrators: Euler, classical RK4, Dormand-Prince 5(4)."""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from cnodes.errors import ConfigError, InstabilityError, NonConvergenceError

METHODS = ("euler", "rk4", "dopri5")
FIXED_STEP = ("euler", "rk4")

# Dormand-Prince 5(4) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
EXPONENT = 1 / 5


@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri5"
    h: float = 0.05
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        for name in ("h", "rtol", "atol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"solver {name} must be a positive number, got {v!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError(f"max_steps must be a positive integer, got {self.max_steps!r}")

    @property
    def fixed_step(self):
        return self.method in FIXED_STEP


@dataclass
class SolveStats:
    nfe: int = 0
    steps_accepted: int = 0
    steps_rejected: int = 0
    # Largest single tape built while solving; stays flat for the adjoint.
    peak_tape_nodes: int = 0

    def to_json(self):
        return {"nfe": self.nfe, "steps_accepted": self.steps_accepted, "steps_rejected": self.steps_rejected}

    def __add__(self, other):
        return SolveStats(
            self.nfe + other.nfe,
            self.steps_accepted + other.steps_accepted,
            self.steps_rejected + other.steps_rejected,
            max(self.peak_tape_nodes, other.peak_tape_nodes),
        )


@dataclass
class OdeProblem:
    """``dy/ds = dynamics(s, y)`` on ``s_span`` from ``y0``; s1 < s0 is allowed."""

    dynamics: Callable
    s_span: tuple
    y0: np.ndarray = field(repr=False)

    def __post_init__(self):
        s0, s1 = (float(v) for v in self.s_span)
        if s0 == s1:
            raise ConfigError("s_span endpoints must differ")
        self.s_span = (s0, s1)
        self.y0 = np.asarray(self.y0, dtype=np.float64)


def fixed_grid(s0, s1, h):
    """Uniform grid from s0 to s1 with spacing at most h, endpoints exact."""
    n = max(1, math.ceil(abs(s1 - s0) / h - 1e-9))
    grid = np.linspace(s0, s1, n + 1)
    grid[-1] = s1
    return grid


def _evaluate(f, s, y, stats):
    out = np.asarray(f(s, y), dtype=np.float64)
    stats.nfe += 1
    if out.shape != y.shape:
        raise ConfigError(f"dynamics returned shape {out.shape} for state shape {y.shape}")
    if not np.all(np.isfinite(out)):
        raise InstabilityError(s)
    return out


def euler_step(f, s, y, ds, stats):
    return y + ds * _evaluate(f, s, y, stats)


def rk4_step(f, s, y, ds, stats):
    k1 = _evaluate(f, s, y, stats)
    k2 = _evaluate(f, s + ds / 2, y + ds / 2 * k1, stats)
    k3 = _evaluate(f, s + ds / 2, y + ds / 2 * k2, stats)
    k4 = _evaluate(f, s + ds, y + ds * k3, stats)
    return y + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def initial_step(f, s0, y0, f0, direction, rtol, atol, stats):
    """Starting step from Hairer, Norsett & Wanner (Solving ODEs I, II.4)."""
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = _evaluate(f, s0 + direction * h0, y1, stats)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** EXPONENT
    return min(100 * h0, h1)


def _dopri5(f, s0, s1, y0, config, stats):
    direction = 1.0 if s1 > s0 else -1.0
    s, y = s0, y0
    k1 = _evaluate(f, s, y, stats)
    h = initial_step(f, s0, y0, k1, direction, config.rtol, config.atol, stats)
    span_eps = 1e-12 * max(1.0, abs(s1 - s0))
    while direction * (s1 - s) > span_eps:
        if stats.steps_accepted + stats.steps_rejected >= config.max_steps:
            raise NonConvergenceError(
                f"dopri5 exceeded max_steps={config.max_steps} at s={s:.6g}", stats
            )
        last = h >= abs(s1 - s) - span_eps
        if last:
            h = abs(s1 - s)
        ds = direction * h
        ks = [k1]
        for i in range(1, 7):
            yi = y + ds * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(_evaluate(f, s + _C[i] * ds, yi, stats))
        # Row 7 of A equals the 5th-order weights, so stage 7 is evaluated at y_new (FSAL).
        y_new = y + ds * sum(b * k for b, k in zip(_A[6], ks[:6]) if b != 0.0)
        err = ds * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        norm = error_norm(err, y, y_new, config.rtol, config.atol)
        if norm <= 1.0:
            stats.steps_accepted += 1
            s = s1 if last else s + ds
            y = y_new
            k1 = ks[6]
        else:
            stats.steps_rejected += 1
        factor = MAX_FACTOR if norm == 0.0 else SAFETY * norm ** (-EXPONENT)
        h = h * min(MAX_FACTOR, max(MIN_FACTOR, factor))
    return y


def integrate(problem, config=SolverConfig()):
    """Integrate ``problem`` and return ``(y_final, SolveStats)``.

    Fixed-step methods walk a uniform grid that ends exactly at s1 with steps
    no longer than ``config.h``.  ``dopri5`` adapts its step with the RMS error
    norm, safety 0.9, exponent 1/5 and per-step factor limits [0.2, 5]; it costs
    two evaluations to start plus six per attempted step.
    """
    stats = SolveStats()
    s0, s1 = problem.s_span
    f = problem.dynamics
    y = problem.y0.copy()
    if config.method == "dopri5":
        return _dopri5(f, s0, s1, y, config, stats), stats
    step = euler_step if config.method == "euler" else rk4_step
    grid = fixed_grid(s0, s1, config.h)
    if len(grid) - 1 > config.max_steps:
        raise NonConvergenceError(
            f"{config.method} grid needs {len(grid) - 1} steps > max_steps={config.max_steps}", stats
        )
    for a, b in zip(grid[:-1], grid[1:]):
        y = step(f, a, y, b - a, stats)
        stats.steps_accepted += 1
    return y, stats
