from . import tensor as ops
from .gradcheck import grad_check, numeric_grad
from .nn import (MLP, Attention, CrossAttention, DecoderLayer, EncoderLayer, LayerNorm, Linear,
                 Module, Transformer)
from .optim import AdamW, AdamWState, adamw_step, cosine_lr
from .tensor import BACKWARD, NonFiniteError, ShapeError, Tensor, backward, stop_gradient

__all__ = [
    "ops", "Tensor", "backward", "stop_gradient", "BACKWARD", "NonFiniteError", "ShapeError",
    "grad_check", "numeric_grad", "AdamW", "AdamWState", "adamw_step", "cosine_lr",
    "Module", "Linear", "LayerNorm", "MLP", "Attention", "CrossAttention", "EncoderLayer",
    "DecoderLayer", "Transformer",
]
