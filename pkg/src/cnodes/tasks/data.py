"""Synthetic datasets and the percent-deviation metric."""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

TOY_KINDS = ("annuli_classification", "reflection_map", "gaussian_mixture_density")


def analytic_u(x, t):
    """Solution of u u_x + u_t = u with u(x, 0) = 2x/3 on 1 <= x <= 2."""
    et = np.exp(t)
    return 2.0 * np.asarray(x) * et / (2.0 * et + 1.0)


def percent_deviation(pred, true):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    true = np.asarray(true, dtype=np.float64).ravel()
    return float(np.mean(np.abs(pred - true) / np.abs(true)) * 100.0)


@dataclass(frozen=True)
class PdeRegressionTask:
    train_xt: np.ndarray
    train_u: np.ndarray
    test_xt: np.ndarray
    test_u: np.ndarray
    seed: int


def _sample_xt(rng, count):
    return np.column_stack([rng.uniform(1.0, 2.0, count), rng.uniform(0.0, 1.0, count)])


def gen_pde_dataset(n_train=200, n_test=200, seed=0):
    rng = np.random.default_rng(seed)
    tr = _sample_xt(rng, n_train)
    te = _sample_xt(rng, n_test)
    return PdeRegressionTask(tr, analytic_u(tr[:, 0], tr[:, 1]), te, analytic_u(te[:, 0], te[:, 1]), seed)


@dataclass(frozen=True)
class TimeSeriesTask:
    """Observations of u(x, t) with x withheld.

    ``train_t``/``train_u`` hold noisy samples on t in [0, 1]; ``windows``
    maps each test window (n, n + 1) to noiseless ``(t, u)`` arrays.  The
    hidden ``x`` arrays are kept only for diagnostics.
    """

    train_t: np.ndarray
    train_u: np.ndarray
    windows: dict
    anchor: float
    noise: float
    seed: int
    train_x: np.ndarray = None


WINDOWS = tuple((n, n + 1) for n in range(6))


def gen_timeseries(n_train=200, n_test=200, noise=0.1, seed=0, windows=WINDOWS):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1.0, 2.0, n_train)
    t = rng.uniform(0.0, 1.0, n_train)
    u = analytic_u(x, t) + noise * rng.standard_normal(n_train)
    tests = {}
    for lo, hi in windows:
        xw = rng.uniform(1.0, 2.0, n_test)
        tw = rng.uniform(lo, hi, n_test)
        tests[(lo, hi)] = (tw, analytic_u(xw, tw))
    return TimeSeriesTask(t, u, tests, float(analytic_u(1.0, 0.0)), noise, seed, x)


@dataclass(frozen=True)
class ToyTask2D:
    kind: str
    inputs: np.ndarray
    targets: np.ndarray
    seed: int


def gen_toy2d(kind, size=500, seed=0, radii=(1.0, 2.0), margin=0.25, means=((-2.0, 0.0), (2.0, 0.0)), dim=1):
    """Desk-scale 2-D tasks.

    ``annuli_classification``: points on two concentric rings (radius jitter
    below ``margin``) labelled 0 (inner) and 1 (outer).
    ``reflection_map``: inputs v in [-1, 1]^dim with targets -v.
    ``gaussian_mixture_density``: an equal mixture of unit-covariance
    Gaussians at ``means``; ``targets`` holds the component labels.
    """
    rng = np.random.default_rng(seed)
    if kind == "annuli_classification":
        labels = rng.integers(0, 2, size)
        r = np.asarray(radii, dtype=np.float64)[labels] + rng.uniform(-margin, margin, size) * 0.999
        phi = rng.uniform(0.0, 2 * math.pi, size)
        pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        return ToyTask2D(kind, pts, labels, seed)
    if kind == "reflection_map":
        v = rng.uniform(-1.0, 1.0, (size, dim))
        return ToyTask2D(kind, v, -v, seed)
    if kind == "gaussian_mixture_density":
        labels = rng.integers(0, len(means), size)
        pts = rng.standard_normal((size, 2)) + np.asarray(means, dtype=np.float64)[labels]
        return ToyTask2D(kind, pts, labels, seed)
    raise ValueError(f"kind must be one of {TOY_KINDS}")


def write_csv(path, header, rows):
    """Write ``rows`` under ``header`` atomically."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def pde_rows(xt, u):
    return [(a, b, c) for (a, b), c in zip(xt, u)]


def toy_rows(task):
    tgt = task.targets
    if tgt.ndim == 1:
        return [(p[0], p[1], int(lab)) for p, lab in zip(task.inputs, tgt)]
    return [tuple(p) + tuple(q) for p, q in zip(task.inputs, tgt)]
