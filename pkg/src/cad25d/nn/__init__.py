from .functional import (
    EmptyBatchError,
    ParameterError,
    contrastive_loss,
    conv2d,
    dropout,
    euclidean_distance,
    fully_connected,
    gather_bilinear,
    l2_normalize,
    linear,
    maxpool2,
    normal_regression_loss,
    relu,
    softmax,
    softmax_loss,
)
from .checkpoint import CheckpointError, dumps, load, loads, save
from .gradcheck import GradCheckReport, gradient_check
from .optim import ParameterSet, TrainConfig, sgd_step
from .tensor import DimensionError, StateError, Tensor, concat, parameter, stack

__all__ = [
    "CheckpointError", "DimensionError", "EmptyBatchError", "GradCheckReport", "ParameterError",
    "ParameterSet", "StateError", "Tensor", "TrainConfig", "concat",
    "contrastive_loss", "conv2d", "dropout", "dumps", "euclidean_distance",
    "fully_connected", "gather_bilinear", "gradient_check", "l2_normalize",
    "linear", "load", "loads", "maxpool2", "normal_regression_loss", "parameter", "relu",
    "save", "sgd_step", "softmax", "softmax_loss", "stack",
]
