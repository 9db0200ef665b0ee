"""Finite-difference gradient checks for the tape primitives."""

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.tape import Tape, backward


def relative_error(got, want):
    """max|got - want| / max|want| (absolute when ``want`` is all zero)."""
    got, want = np.asarray(got, dtype=np.float64), np.asarray(want, dtype=np.float64)
    scale = np.max(np.abs(want)) if want.size else 0.0
    err = np.max(np.abs(got - want)) if want.size else 0.0
    return err / scale if scale > 0 else err


def central_difference(fn, x, h=1e-5):
    """Gradient of scalar ``fn`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_primitive(name, rng, h=1e-5):
    """Largest relative gradient error over all inputs of one random instance."""
    fn, specs = ops.PRIMITIVES[name]
    inputs = [sampler(rng, shape) for shape, sampler in specs]
    weight = np.asarray(rng.standard_normal(np.shape(fn(*inputs))))

    def scalar(*args):
        return float(np.sum(fn(*args) * weight))

    with Tape() as tape:
        leaves = [tape.var(x) for x in inputs]
        out = ops.sum(ops.mul(fn(*leaves), weight))
        grads = backward(out)
    worst = 0.0
    for i, leaf in enumerate(leaves):

        def partial(xi, i=i):
            args = list(inputs)
            args[i] = xi
            return scalar(*args)

        fd = central_difference(partial, inputs[i], h)
        worst = max(worst, relative_error(grads[leaf], fd))
    return worst


def gradcheck_all(instances=100, seed=0, h=1e-5):
    """Map primitive name -> max relative error over ``instances`` draws."""
    rng = np.random.default_rng(seed)
    return {name: max(check_primitive(name, rng, h) for _ in range(instances)) for name in ops.PRIMITIVES}
