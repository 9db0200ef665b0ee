"""Continuous normalizing flows under characteristic dynamics."""

from cnodes.density.flow import (
    BaseDensity,
    FlowState,
    TraceEstimator,
    bits_per_dim,
    flow_dynamics,
    gaussian_nll,
    hutchinson_trace,
    log_prob,
    log_prob_values,
    pull_back,
    push_forward,
    sample,
    train_cnf,
)

__all__ = [
    "BaseDensity", "FlowState", "TraceEstimator", "flow_dynamics", "hutchinson_trace",
    "log_prob", "log_prob_values", "push_forward", "pull_back", "sample", "train_cnf",
    "gaussian_nll", "bits_per_dim",
]
