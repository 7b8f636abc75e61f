from .core import Tensor, as_tensor, backward, grad_enabled, no_grad
from .ops import (
    ShapeError,
    add,
    add_channel_bias,
    avg_pool2,
    bmm,
    concat_channels,
    conv2d,
    dense,
    group_norm,
    huber_loss,
    mean,
    mse_loss,
    mul,
    nearest_upsample2,
    relu,
    reshape,
    silu,
    slice_channels,
    softmax,
    sum,  # noqa: A004
    spectral_conv2d,
    sub,
    transpose_last2,
)
from .optim import AdamState, NonFiniteGradient, adam_step
from .checkpoint import CheckpointError, load_weights, save_weights

__all__ = [
    "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad", "ShapeError",
    "add", "add_channel_bias", "avg_pool2", "bmm", "concat_channels", "conv2d",
    "dense", "group_norm", "huber_loss", "mean", "mse_loss", "mul",
    "nearest_upsample2", "relu", "reshape", "silu", "slice_channels", "softmax",
    "spectral_conv2d", "sub", "sum", "transpose_last2", "AdamState", "NonFiniteGradient",
    "adam_step", "CheckpointError", "load_weights", "save_weights",
]
