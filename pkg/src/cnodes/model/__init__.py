"""Characteristic neural ODE models and their training loop."""

from cnodes.model.constructions import homeomorphism_model, intersecting_model, linear_map
from cnodes.model.field import CharacteristicField, FrozenMap, constant_map, du_ds
from cnodes.model.model import (
    CnodeModel,
    apply_head,
    evolve,
    evolve_backward,
    forward,
    node_field,
    predict,
)
from cnodes.model.train import TrainConfig, cross_entropy, fit, mse, train

__all__ = [
    "CharacteristicField", "FrozenMap", "constant_map", "du_ds",
    "CnodeModel", "node_field", "forward", "apply_head", "evolve", "evolve_backward", "predict",
    "intersecting_model", "homeomorphism_model", "linear_map",
    "TrainConfig", "train", "fit", "mse", "cross_entropy",
]
