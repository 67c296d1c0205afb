from rssi_gestures.lstm.model import LstmModel, StaleCacheError, backward, forward, loss_nll, softmax
from rssi_gestures.lstm.optim import AdamState, adam_step, clip_gradients, global_norm
from rssi_gestures.lstm.serialize import ModelFormatError, dumps, load_model, loads, save_model
from rssi_gestures.lstm.train import TrainConfig, accuracy, grid_search_cv, stratified_kfold, train

__all__ = [
    "AdamState", "LstmModel", "ModelFormatError", "StaleCacheError", "TrainConfig", "accuracy",
    "adam_step", "backward", "clip_gradients", "dumps", "forward", "global_norm", "grid_search_cv",
    "load_model", "loads", "loss_nll", "save_model", "softmax", "stratified_kfold", "train",
]
