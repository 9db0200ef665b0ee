"""Mini-batch Adam training over a flat ParamVector."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.optim import AdamConfig, adam_step
from cnodes.diffcore.tape import Tape, backward, value_of
from cnodes.errors import ConfigError, ContractError, TrainingDiverged
from cnodes.model.model import apply_head, forward
from cnodes.solver import NfeLog, SolverConfig

log = logging.getLogger(__name__)

LOSSES = ("mse", "cross_entropy")
GRAD_MODES = ("adjoint", "discrete")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-2))
    solver: SolverConfig = field(default_factory=SolverConfig)
    loss: str = "mse"
    grad_mode: str = "adjoint"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"grad_mode must be one of {GRAD_MODES}")


def fit(objective, params, n_samples, config, nfe=None):
    """Generic training loop.

    ``objective(values, idx)`` receives the tape leaf for the parameter vector
    and an index array of the batch; it returns ``(loss, metric)`` with
    ``loss`` a scalar Var (batch mean) and ``metric`` a float.  Batches come
    from a seeded shuffle each epoch.  Returns ``(params, history)``.
    """
    if n_samples < 1:
        raise ContractError("dataset is empty")
    nfe = nfe if nfe is not None else NfeLog()
    rng = np.random.default_rng(config.seed)
    state = None
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_samples)
        nfe.reset()
        tot_loss = tot_metric = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                leaf = tape.var(params.values)
                loss, metric = objective(leaf, idx)
                lv = float(np.asarray(value_of(loss)).reshape(()))
                if not math.isfinite(lv):
                    raise TrainingDiverged(epoch, params, history)
                grads = backward(loss)[leaf]
            params, state = adam_step(params, grads, state, config.adam)
            tot_loss += lv * len(idx)
            tot_metric += float(metric) * len(idx)
        row = {
            "epoch": epoch,
            "loss": tot_loss / n_samples,
            "metric": tot_metric / n_samples,
            "nfe_forward": nfe.forward.nfe / max(nfe.solves, 1),
            "nfe_adjoint": nfe.backward.nfe / max(nfe.solves, 1),
        }
        history.append(row)
        log.debug("epoch %d loss %.6g metric %.6g", epoch, row["loss"], row["metric"])
    return params, history


def mse(pred, target):
    diff = pred - np.asarray(target, dtype=np.float64)
    return ops.mean(diff * diff)


def cross_entropy(logits, labels, probabilities=False):
    """Mean negative log-likelihood of integer ``labels``; returns (loss, accuracy)."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = ops.log(logits) if probabilities else ops.log_softmax(logits)
    onehot = np.eye(value_of(logp).shape[-1])[labels]
    loss = -ops.mean(ops.sum(logp * onehot, axis=-1))
    acc = float(np.mean(np.argmax(value_of(logits), axis=-1) == labels))
    return loss, acc


def train(model, params, dataset, config=TrainConfig()):
    """Fit a :class:`CnodeModel` to ``dataset = (inputs, targets)``.

    Gradients come from the continuous adjoint or from reverse mode through
    fixed solver steps, per ``config.grad_mode``; all three parameter
    segments are updated together.  The history's ``metric`` is the MSE for
    regression and the accuracy for classification.
    """
    z, y = (np.asarray(a) for a in dataset)
    z = z.astype(np.float64)
    nfe = NfeLog()
    softmax_head = model.head is not None and model.head.output_activation == "softmax"

    def objective(values, idx):
        uT, _, _ = forward(model, params, values, z[idx], config.solver, config.grad_mode, nfe)
        out = apply_head(model, params, values, uT)
        if config.loss == "mse":
            loss = mse(out, y[idx])
            return loss, float(loss.value)
        return cross_entropy(out, y[idx], probabilities=softmax_head)

    return fit(objective, params, len(z), config, nfe)
