"""Dense numpy tensors, tape-based reverse-mode AD and MLPs over flat parameters."""

from cnodes.diffcore import ops
from cnodes.diffcore.checkpoint import description_hash, load_checkpoint, save_checkpoint
from cnodes.diffcore.mlp import MlpSpec, init_params, jacobian, mlp_forward, mlp_jvp
from cnodes.diffcore.optim import AdamConfig, AdamState, adam_step
from cnodes.diffcore.params import ParamVector
from cnodes.diffcore.tape import Gradients, Tape, Var, active_tape, backward, value_of, vjp

__all__ = [
    "ops", "Tape", "Var", "Gradients", "active_tape", "backward", "vjp", "value_of",
    "MlpSpec", "mlp_forward", "mlp_jvp", "jacobian", "init_params",
    "ParamVector", "AdamConfig", "AdamState", "adam_step",
    "description_hash", "save_checkpoint", "load_checkpoint",
]
