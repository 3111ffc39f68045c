"""Minimal numpy tensor engine: layers with explicit backward passes, L1 loss and Adam."""

from .core import ChannelAttention, Conv2d, Module, Parameter, ReLU, SpatialAttention
from .functional import ShapeError, conv2d_backward, conv2d_forward
from .gradcheck import GradCheckResult, GradientCheckError, finite_diff_check
from .optim import OptimizerConfig, adam_step, l1_loss

__all__ = [
    "ChannelAttention",
    "Conv2d",
    "GradCheckResult",
    "GradientCheckError",
    "Module",
    "OptimizerConfig",
    "Parameter",
    "ReLU",
    "ShapeError",
    "SpatialAttention",
    "adam_step",
    "conv2d_backward",
    "conv2d_forward",
    "finite_diff_check",
    "l1_loss",
]
