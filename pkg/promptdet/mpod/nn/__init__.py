"""Tensors with reverse-mode differentiation, parameters and layers"""
__all__ = [
    # tensor
    'Tensor', 'no_grad', 'grad_enabled', 'softmax', 'log_softmax', 'layer_norm',
    # params
    'ParamStore', 'Adam', 'clip_grad_norm',
    # layers
    'linear', 'multi_head_attention', 'bilinear_sample', 'conv2d',
    # gradchk
    'finite_diff_check', 'grad_errors']  # yapf: disable

from .gradchk import finite_diff_check, grad_errors
from .layers import bilinear_sample, conv2d, linear, multi_head_attention
from .params import Adam, ParamStore, clip_grad_norm
from .tensor import Tensor, grad_enabled, layer_norm, log_softmax, no_grad, softmax
