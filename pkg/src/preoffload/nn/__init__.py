"""Minimal numpy neural toolkit: dense/LSTM layers, MSE, Adam, BPTT."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, lstm_check_case
from .layers import (
    DenseParams,
    LstmParams,
    ShapeError,
    TapeCache,
    dense_backward,
    dense_forward,
    lstm_backward,
    lstm_cell_forward,
    lstm_forward,
)
from .loss import mse_loss
from .models import LstmRegressor, Mlp, Network
from .optim import AdamState, adam_step, clip_by_global_norm

__all__ = [
    "AdamState",
    "CheckpointError",
    "DenseParams",
    "LstmParams",
    "LstmRegressor",
    "Mlp",
    "Network",
    "ShapeError",
    "TapeCache",
    "adam_step",
    "clip_by_global_norm",
    "dense_backward",
    "dense_forward",
    "grad_check",
    "load_checkpoint",
    "lstm_backward",
    "lstm_cell_forward",
    "lstm_check_case",
    "lstm_forward",
    "mse_loss",
    "save_checkpoint",
]
