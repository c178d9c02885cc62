"""Numerical core: layer ops with analytic gradients, parameter store, SGD, RNG."""
from .checkpoint import load_params, save_params
from .kernels import BACKEND
from .ops import (
    check_finite,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    embedding_backward,
    embedding_lookup,
    max_over_time,
    max_over_time_backward,
    softmax,
    softmax_cross_entropy,
)
from .params import ParameterStore, glorot_limit, sgd_step, uniform
from .rng import RngState

__all__ = [
    "BACKEND", "ParameterStore", "RngState", "check_finite", "conv1d_backward",
    "conv1d_forward", "dense_backward", "dense_forward", "embedding_backward",
    "embedding_lookup", "glorot_limit", "load_params", "max_over_time",
    "max_over_time_backward", "save_params", "sgd_step", "softmax",
    "softmax_cross_entropy", "uniform",
]
