"""Joint failure-mode classifier and per-mode RUL regressors."""

from .losses import combine_weights, loss_ce, loss_hs, mono_pairs, mono_penalty
from .nets import BatchPrediction, JointModel, LstmRegressor, MlpClassifier, softmax
from .training import (
    Adam,
    FoldResult,
    TrainConfig,
    TrainLog,
    export_predictions_csv,
    grad_check,
    load_checkpoint,
    predict_sequence,
    save_checkpoint,
    take_units,
    total_loss,
    train,
    train_cv,
    unit_folds,
)

__all__ = [
    "combine_weights", "loss_ce", "loss_hs", "mono_pairs", "mono_penalty",
    "BatchPrediction", "JointModel", "LstmRegressor", "MlpClassifier", "softmax",
    "Adam", "FoldResult", "TrainConfig", "TrainLog", "export_predictions_csv",
    "grad_check", "load_checkpoint", "predict_sequence", "save_checkpoint",
    "take_units", "total_loss", "train", "train_cv", "unit_folds",
]
