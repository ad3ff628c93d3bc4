"""Minimal tensor library with reverse-mode autodiff."""

from .params import Param, ParamStore, adam_step, load_checkpoint, save_checkpoint
from .tensor import (
    STD_EPS, Tensor, add, as_tensor, backward, bce_with_logits, concat, cosine_similarity,
    debug_mode, default_dtype, div, dropout, exp, getitem, hardtanh, l2_normalize, leaky_relu,
    log, mae, masked_max, masked_mean, masked_min, masked_softmax, masked_std, matmul, mse,
    mul, precision, relu, reshape, sigmoid, split, sqrt, sub, take, tmean, transpose, tsum,
)
