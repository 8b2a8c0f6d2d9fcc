"""Minimal dense-tensor network stack with hand-written backward passes.

Tensors are plain numpy ndarrays (row-major). Training runs in float32;
tests that need finite-difference headroom build float64 stores instead.
"""

from .params import ParamStore, load_checkpoint, save_checkpoint, trunc_normal
from .layers import (
    MlpBlock,
    MultiHeadAttention,
    TransformerBlock,
    Conv2d,
    Linear,
    LayerNorm,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
    set_debug_nan,
    softmax,
    softmax_backward,
)
from .optim import Adam, adam_step, cyclic_lr

__all__ = [
    "Adam", "Conv2d", "LayerNorm", "Linear", "MlpBlock", "MultiHeadAttention",
    "ParamStore", "TransformerBlock", "adam_step", "cyclic_lr", "gelu",
    "gelu_backward", "layer_norm", "layer_norm_backward", "linear",
    "linear_backward", "load_checkpoint", "relu", "relu_backward",
    "save_checkpoint", "set_debug_nan", "softmax", "softmax_backward",
    "trunc_normal",
]
