from .layers import (
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    lstm_backward,
    lstm_forward,
    mse,
    mse_gradient,
    relu_backward,
    relu_forward,
    sgd_step,
)
from .model import CnnModel, LrcnConfig, LrcnModel, load_model, make_model
from .schedule import ReduceLrOnPlateau

__all__ = [
    "conv1d_forward",
    "conv1d_backward",
    "relu_forward",
    "relu_backward",
    "dense_forward",
    "dense_backward",
    "lstm_forward",
    "lstm_backward",
    "mse",
    "mse_gradient",
    "sgd_step",
    "LrcnConfig",
    "LrcnModel",
    "CnnModel",
    "make_model",
    "load_model",
    "ReduceLrOnPlateau",
]
