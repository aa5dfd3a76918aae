"""Minimal CNN engine: forward/backward, losses, Adam, training and grad checks."""
from gpplane.micronet.gradcheck import grad_check
from gpplane.micronet.losses import compute_loss
from gpplane.micronet.modelio import load_model, save_model
from gpplane.micronet.net import (
    MicroNet,
    MicroNetConfig,
    StaleCacheError,
    sigmoid,
    sv_classifier_config,
    sv_regressor_config,
)
from gpplane.micronet.optim import AdamState, adam_step
from gpplane.micronet.training import Dataset, Schedule, TrainingDiverged, sv_schedule, train


def forward(net: MicroNet, x):
    return net.forward(x)


def backward(net: MicroNet, cache, upstream):
    return net.backward(cache, upstream)


__all__ = [
    "AdamState",
    "Dataset",
    "MicroNet",
    "MicroNetConfig",
    "Schedule",
    "StaleCacheError",
    "TrainingDiverged",
    "adam_step",
    "backward",
    "compute_loss",
    "forward",
    "grad_check",
    "load_model",
    "save_model",
    "sigmoid",
    "sv_classifier_config",
    "sv_regressor_config",
    "sv_schedule",
    "train",
]
