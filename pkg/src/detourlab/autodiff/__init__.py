"""Minimal dense tensors with reverse-mode autodiff, layers, AdamW and a gradient checker."""
from .gradcheck import grad_check
from .nn import (
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    multi_head_attention,
)
from .optim import AdamWState, adamw_step
from .serialize import load_tensors, save_tensors
from .tensor import (
    IndexOutOfRange,
    ShapeMismatch,
    Tape,
    Tensor,
    add,
    bce_with_logits,
    concat,
    cross_entropy,
    embedding_lookup,
    gelu,
    layer_norm,
    log_softmax,
    masked_fill,
    matmul,
    mean,
    mul,
    reshape,
    slice_,
    softmax,
    sum_,
    swapaxes,
    tensor,
    transpose,
)

__all__ = [
    "AdamWState", "IndexOutOfRange", "LayerNorm", "Linear", "Module", "MultiHeadAttention",
    "ShapeMismatch", "Tape", "Tensor", "TransformerBlock", "adamw_step", "add",
    "bce_with_logits", "concat", "cross_entropy", "embedding_lookup", "gelu", "grad_check",
    "layer_norm", "load_tensors", "log_softmax", "masked_fill", "matmul", "mean", "mul",
    "multi_head_attention", "reshape", "save_tensors", "slice_", "softmax", "sum_", "swapaxes",
    "tensor", "transpose",
]
