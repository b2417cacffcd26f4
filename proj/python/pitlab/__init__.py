"""Permutation-invariant training lab: metrics, assignment, DSD, layer-wise loss, training."""

from ._pitlab import (
    ConfigError,
    PitlabError,
    compare,
    default_weights,
    exhaustive_select,
    fixed_assignment_loss,
    generate_sample,
    hungarian_select,
    layerwise_loss,
    metric_improvement,
    pairwise_loss_matrix,
    pit_select,
    relaxed_better,
    run,
    sdr,
    si_sdr,
    sinkpit_loss,
    train,
    validate_config,
)

__all__ = [
    "ConfigError",
    "PitlabError",
    "compare",
    "default_weights",
    "exhaustive_select",
    "fixed_assignment_loss",
    "generate_sample",
    "hungarian_select",
    "layerwise_loss",
    "metric_improvement",
    "pairwise_loss_matrix",
    "pit_select",
    "relaxed_better",
    "run",
    "sdr",
    "si_sdr",
    "sinkpit_loss",
    "train",
    "validate_config",
]
