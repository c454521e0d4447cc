"""Minimal differentiable-computation core: tape autodiff, parameter store,
Adam, gradient clipping, finite-difference checking, binary checkpoints."""

from . import autodiff
from .autodiff import Node, Tape
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .gradcheck import FdReport, fd_gradient_check
from .optim import NonFiniteGradientError, adam_step, clip_global_norm
from .params import Dense, ParameterStore, uniform_fan_in

__all__ = [
    "autodiff",
    "Node",
    "Tape",
    "ParameterStore",
    "Dense",
    "uniform_fan_in",
    "adam_step",
    "clip_global_norm",
    "NonFiniteGradientError",
    "fd_gradient_check",
    "FdReport",
    "save_arrays",
    "load_arrays",
    "CheckpointError",
]
