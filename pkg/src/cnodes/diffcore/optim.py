from dataclasses import dataclass

import numpy as np

from cnodes.diffcore.params import ParamVector
from cnodes.errors import DimensionError, PoisonedGradientError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(0, np.zeros(n), np.zeros(n))


def adam_step(params, grads, state=None, hyper=AdamConfig()):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``."""
    g = np.asarray(grads.values if isinstance(grads, ParamVector) else grads, dtype=np.float64)
    if g.shape != params.values.shape:
        raise DimensionError("gradient length", params.values.shape, g.shape)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise PoisonedGradientError(params.segment_of(int(bad[0])))
    if state is None:
        state = AdamState.zeros(g.size)
    t = state.step + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * g * g
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    new = params.values - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return params.with_values(new), AdamState(t, m, v)
