"""Characteristics of the inviscid Burgers equation u_t + u u_x = 0."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from cnodes.solver import OdeProblem, SolverConfig, integrate


@dataclass(frozen=True)
class BurgersDemo:
    f: Callable
    x0: tuple = tuple(np.linspace(-1.0, 1.0, 9))
    T: float = 1.0


@dataclass
class Characteristic:
    x0: float
    u: float
    s: np.ndarray
    x: np.ndarray

    @property
    def polyline(self):
        """(x, t) vertices with t = s."""
        return np.column_stack([self.x, self.s])


def burgers_characteristics(demo, grid=None, samples=11):
    """Straight lines x(s) = f(x0) s + x0, t(s) = s carrying u = f(x0)."""
    grid = np.asarray(demo.x0 if grid is None else grid, dtype=np.float64)
    s = np.linspace(0.0, demo.T, samples)
    out = []
    for x0 in grid:
        u = float(demo.f(x0))
        out.append(Characteristic(float(x0), u, s, u * s + x0))
    return out


def moc_integrate(demo, grid=None, solver=SolverConfig(rtol=1e-12, atol=1e-12)):
    """Integrate dx/ds = u, du/ds = 0 for every foot point jointly.

    Returns ``(x_T, u_T)``; these equal the closed-form lines to rounding.
    """
    grid = np.asarray(demo.x0 if grid is None else grid, dtype=np.float64)
    u0 = np.array([float(demo.f(x)) for x in grid])

    def rhs(s, y):
        n = len(grid)
        return np.concatenate([y[n:], np.zeros(n)])

    y, _ = integrate(OdeProblem(rhs, (0.0, demo.T), np.concatenate([grid, u0])), solver)
    return y[:len(grid)], y[len(grid):]


def crossings(chars):
    """Pairwise intersection parameters s > 0 of characteristic lines.

    Returns a list of ``(s, i, j)`` sorted by s; parallel lines never meet.
    """
    out = []
    for i in range(len(chars)):
        for j in range(i + 1, len(chars)):
            du = chars[i].u - chars[j].u
            if du == 0.0:
                continue
            s = -(chars[i].x0 - chars[j].x0) / du
            if s > 0:
                out.append((s, i, j))
    out.sort()
    return out


def first_crossing(chars):
    c = crossings(chars)
    return c[0][0] if c else None


def breaking_time(f, grid, h=1e-6):
    """Analytic shock time -1 / min f'(x0) when f decreases somewhere, else None."""
    grid = np.asarray(grid, dtype=np.float64)
    slopes = (np.vectorize(f)(grid + h) - np.vectorize(f)(grid - h)) / (2 * h)
    m = slopes.min()
    return -1.0 / m if m < 0 else None


def trajectory_rows(chars):
    return [(k, c.x0, c.u, s, x) for k, c in enumerate(chars) for s, x in zip(c.s, c.x)]
