"""Persist a complete recognizer (model, scaler, gate, thresholds) in one model file."""

from __future__ import annotations

import numpy as np

from rssi_gestures.lstm.serialize import ModelFormatError, load_model, save_model
from rssi_gestures.pipeline import GateConfig, Recognizer, Scaler, WindowingConfig


def save_recognizer(path, rec: Recognizer) -> None:
    extras = {
        "scaler.means": rec.scaler.means,
        "scaler.stds": rec.scaler.stds,
        "gate.variance_threshold": np.array([rec.gate.variance_threshold]),
        "thresholds": np.array(rec.thresholds, dtype=float),
        "windowing": np.array([rec.windowing.window_s, rec.windowing.hop_s]),
    }
    save_model(path, rec.model, extras)


def load_recognizer(path) -> Recognizer:
    model, extras = load_model(path)
    try:
        scaler = Scaler(extras["scaler.means"], extras["scaler.stds"])
        gate = GateConfig(float(extras["gate.variance_threshold"][0]))
        thresholds = tuple(float(x) for x in extras["thresholds"])
        window_s, hop_s = (float(x) for x in extras["windowing"])
    except KeyError as e:
        raise ModelFormatError(f"model file lacks recognizer tensor {e}") from None
    if scaler.tau != model.tau:
        raise ModelFormatError(f"scaler tau {scaler.tau} does not match model tau {model.tau}")
    return Recognizer(model, scaler, gate, WindowingConfig(window_s, hop_s), thresholds)
