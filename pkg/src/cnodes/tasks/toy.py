"""Small tasks that separate conditioned characteristics from a plain NODE."""

import numpy as np

from cnodes.diffcore.mlp import MlpSpec
from cnodes.diffcore.optim import AdamConfig
from cnodes.model.field import CharacteristicField
from cnodes.model.model import CnodeModel, node_field, predict
from cnodes.model.train import TrainConfig, train
from cnodes.solver import SolverConfig
from cnodes.tasks.data import gen_toy2d

TWO_POINT = (np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]]))
TOY_TRAIN = TrainConfig(epochs=200, batch_size=2, adam=AdamConfig(lr=1e-2), solver=SolverConfig(rtol=1e-5, atol=1e-7))


def cnode_model(n=1, k=2, hidden=16, head=None, balance_mode="u_only"):
    """Learned field with a(x, u, u0) and J(u) (or J(x, u) in full mode)."""
    j_in = n if balance_mode == "u_only" else n + k
    fld = CharacteristicField(
        k, n,
        MlpSpec((k + 2 * n, hidden, k)),
        MlpSpec((j_in, hidden, n * k)),
        balance_mode,
    )
    return CnodeModel(fld, head=head)


def node_model(n=1, hidden=16, head=None):
    """Unconditioned NODE du/ds = f(s, u)."""
    return CnodeModel(node_field(n, (hidden,), time_input=True), head=head)


def build(kind, **kw):
    if kind == "cnode":
        return cnode_model(**kw)
    if kind == "node":
        kw.pop("k", None)
        kw.pop("balance_mode", None)
        return node_model(**kw)
    raise ValueError("kind must be 'node' or 'cnode'")


def fit_regression(kind, dataset, config=TOY_TRAIN, **kw):
    """Train ``kind`` on ``(inputs, targets)``; returns (model, params, history, mse)."""
    model = build(kind, **kw)
    params = model.init_params(config.seed)
    params, history = train(model, params, dataset, config)
    pred = predict(model, params, dataset[0], config.solver)
    err = float(np.mean((pred - dataset[1]) ** 2))
    return model, params, history, err


def fit_two_point(kind, config=TOY_TRAIN, **kw):
    """Fit the crossing map 0 -> 1, 1 -> 0."""
    return fit_regression(kind, TWO_POINT, config, **kw)


def fit_reflection(kind, size=64, seed=0, config=TOY_TRAIN, **kw):
    task = gen_toy2d("reflection_map", size=size, seed=seed, dim=1)
    return fit_regression(kind, (task.inputs, task.targets), config, **kw)


def fit_annuli(kind, size=400, seed=0, config=None, hidden=16, k=2):
    """Two-ring classification with a softmax head on the 2-D latent state."""
    config = config or TrainConfig(epochs=30, batch_size=50, loss="cross_entropy", seed=seed,
                                   solver=SolverConfig(rtol=1e-4, atol=1e-6))
    task = gen_toy2d("annuli_classification", size=size, seed=seed)
    head = MlpSpec((2, 2), output_activation="softmax")
    model = cnode_model(2, k, hidden, head) if kind == "cnode" else node_model(2, hidden, head)
    params = model.init_params(config.seed)
    params, history = train(model, params, (task.inputs, task.targets), config)
    return model, params, history, task
