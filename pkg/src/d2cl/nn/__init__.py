"""Minimal numpy autodiff engine with the layers the two towers need."""

from .tensor import Tensor, concat, no_grad, parameter, sigmoid, tanh
from .ops import (ShapeError, batch_norm, bce_with_logits, conv1d, conv2d, dropout,
                  global_avg_pool2d, graph_conv, linear, normalized_adjacency, prelu, sort_pool)
from .layers import BatchNorm, Conv1d, Conv2d, GraphConv, Linear, Module, PReLU
from .optim import Adam, AdamState, PlateauSchedule, adam_step, plateau_update
from .gradcheck import grad_check

__all__ = [
    "Tensor", "concat", "no_grad", "parameter", "sigmoid", "tanh",
    "ShapeError", "batch_norm", "bce_with_logits", "conv1d", "conv2d", "dropout", "global_avg_pool2d",
    "graph_conv", "linear", "normalized_adjacency", "prelu", "sort_pool",
    "BatchNorm", "Conv1d", "Conv2d", "GraphConv", "Linear", "Module", "PReLU",
    "Adam", "AdamState", "PlateauSchedule", "adam_step", "plateau_update", "grad_check",
]
