"""Forecasting models: ConvLSTM, stacked LSTM, and per-cell baselines."""

from .convlstm import ConvLstmCell, ConvLstmNet
from .lstm import LstmLayer, LstmNet
from .training import (TrainConfig, train_net, predict_net, predict_binary,
                       save_net, load_net, save_loss_trace, load_loss_trace)
from .baselines import (cell_rows, balanced_weights,
                        LogisticModel, fit_logistic, predict_logistic,
                        ForestConfig, ForestModel, fit_forest, predict_forest,
                        save_forest, load_forest,
                        save_logistic, load_logistic)

__all__ = [
    "ConvLstmCell", "ConvLstmNet", "LstmLayer", "LstmNet",
    "TrainConfig", "train_net", "predict_net", "predict_binary",
    "save_net", "load_net", "save_loss_trace", "load_loss_trace",
    "cell_rows", "balanced_weights",
    "LogisticModel", "fit_logistic", "predict_logistic",
    "ForestConfig", "ForestModel", "fit_forest", "predict_forest",
    "save_forest", "load_forest", "save_logistic", "load_logistic",
]
