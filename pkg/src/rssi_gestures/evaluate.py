"""Offline evaluation: repeated random splits, confusion matrices, soak runs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from rssi_gestures.ingest import split_train_test
from rssi_gestures.knn_dtw import DtwConfig, KnnDtw
from rssi_gestures.labels import GESTURES, GestureLabel
from rssi_gestures.lstm import TrainConfig, train
from rssi_gestures.pipeline import (GateConfig, Recognizer, WindowingConfig, as_window, calibrate_thresholds,
                                    featurize_many, fit_scaler, min_window_variance, recognize_stream,
                                    window_stream)

LABEL_ORDER = (*GESTURES, GestureLabel.NOISE)


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """4x4 counts, rows = true label, columns = predicted, in Swipe/Push/Pull/Noise order."""
    cm = np.zeros((4, 4), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[int(t), int(p)] += 1
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    total = cm.sum()
    return 100.0 * float(np.trace(cm)) / float(total) if total else float("nan")


def per_class_accuracy(cm: np.ndarray) -> dict[GestureLabel, float]:
    out = {}
    for lab in GESTURES:
        n = cm[int(lab)].sum()
        out[lab] = 100.0 * float(cm[int(lab), int(lab)]) / float(n) if n else float("nan")
    return out


def confusion_csv(cm: np.ndarray) -> str:
    names = [str(l) for l in LABEL_ORDER]
    rows = ["true\\pred," + ",".join(names)]
    rows += [names[i] + "," + ",".join(str(int(v)) for v in cm[i]) for i in range(4)]
    return "\n".join(rows) + "\n"


@dataclass
class EvalReport:
    name: str
    split_accuracies: list[float] = field(default_factory=list)
    confusions: list[np.ndarray] = field(default_factory=list)
    train_seconds: list[float] = field(default_factory=list)
    predict_ms_per_sample: list[float] = field(default_factory=list)

    def add(self, y_true, y_pred, train_s: float = 0.0, predict_ms: float = 0.0):
        cm = confusion_matrix(y_true, y_pred)
        self.confusions.append(cm)
        self.split_accuracies.append(accuracy_from_confusion(cm))
        self.train_seconds.append(train_s)
        self.predict_ms_per_sample.append(predict_ms)

    @property
    def confusion(self) -> np.ndarray:
        return sum(self.confusions, np.zeros((4, 4), dtype=np.int64))

    @property
    def mean(self) -> float:
        return float(np.mean(self.split_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.split_accuracies))

    def per_class(self) -> dict[GestureLabel, float]:
        return per_class_accuracy(self.confusion)

    def summary(self) -> str:
        lines = [f"{self.name}: accuracy {self.mean:.1f}% (+-{self.std:.1f}) over {len(self.split_accuracies)} splits"]
        lines += [f"  {lab}: {acc:.1f}%" for lab, acc in self.per_class().items()]
        if self.train_seconds:
            lines.append(f"  train time {np.mean(self.train_seconds) / 60:.2f} min/model, "
                         f"prediction {np.mean(self.predict_ms_per_sample):.2f} ms/sample")
        return "\n".join(lines)


@dataclass
class SplitResult:
    recognizer: Recognizer
    y_true: np.ndarray
    y_pred: np.ndarray
    train_s: float
    predict_ms: float
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray


def train_recognizer(train_windows: Sequence, tau: int, config: TrainConfig, window_s: float,
                     hop_s: float = 1.0):
    """Fit scaler, model and variance gate on labelled training windows."""
    F = featurize_many(train_windows, tau, window_s)
    y = np.array([int(w.label) for w in train_windows])
    scaler = fit_scaler(F)
    t0 = time.perf_counter()
    model, losses = train(scaler.transform(F), y, config)
    elapsed = time.perf_counter() - t0
    gate = GateConfig(min_window_variance(train_windows))
    rec = Recognizer(model, scaler, gate, WindowingConfig(window_s, hop_s))
    return rec, losses, elapsed, F, y


def run_split(train_windows, test_windows, tau: int, config: TrainConfig, window_s: float,
              use_pipeline: bool = False) -> SplitResult:
    """Train on one split and label the test windows.

    Plain mode scores the model's arg-max; ``use_pipeline`` sends each test
    window through gate, preprocessing, model and logit thresholds instead.
    """
    rec, _, train_s, F, y = train_recognizer(train_windows, tau, config, window_s)
    y_true = np.array([int(w.label) for w in test_windows])
    Ft = featurize_many(test_windows, tau, window_s)
    t0 = time.perf_counter()
    if use_pipeline:
        y_pred = np.array([int(rec.classify(as_window(w, window_s))[0]) for w in test_windows])
    else:
        y_pred = rec.model.predict(rec.scaler.transform(Ft))
    predict_ms = 1000.0 * (time.perf_counter() - t0) / max(len(test_windows), 1)
    return SplitResult(rec, y_true, y_pred, train_s, predict_ms, F, y, Ft)


def knn_on_split(split: SplitResult, cfg: DtwConfig) -> tuple[np.ndarray, float]:
    """k-NN DTW on the same standardized features the LSTM saw."""
    scaler = split.recognizer.scaler
    clf = KnnDtw(cfg).fit(scaler.transform(split.train_features), split.train_labels)
    Q = scaler.transform(split.test_features)
    t0 = time.perf_counter()
    pred = clf.predict(Q)
    return pred, 1000.0 * (time.perf_counter() - t0) / max(len(Q), 1)


def evaluate_splits(windows: Sequence, tau: int, config: TrainConfig, window_s: float,
                    splits: int = 10, ratio: float = 0.75, seed: int = 0,
                    knn: DtwConfig | None = None, use_pipeline: bool = False,
                    progress: Callable[[int, SplitResult], None] | None = None) -> list[EvalReport]:
    """Repeat train/test evaluation over ``splits`` random stratified splits."""
    lstm_report = EvalReport("lstm")
    knn_report = EvalReport(f"knn-dtw(k={knn.k})") if knn else None
    for r in range(splits):
        tr, te = split_train_test(windows, ratio, seed + r)
        res = run_split(tr, te, tau, config.replace(seed=config.seed + r), window_s, use_pipeline)
        lstm_report.add(res.y_true, res.y_pred, res.train_s, res.predict_ms)
        if knn_report is not None:
            pred, ms = knn_on_split(res, knn)
            knn_report.add(res.y_true, pred, 0.0, ms)
        if progress is not None:
            progress(r, res)
    return [lstm_report] + ([knn_report] if knn_report else [])


def calibrate_recognizer(rec: Recognizer, gesture_windows, noise_session, recall_retention: float) -> tuple:
    """Logit thresholds from labelled gesture windows and a gesture-free recording."""
    window_s = rec.windowing.window_s
    G = rec.model.logits(rec.scaler.transform(featurize_many(gesture_windows, rec.tau, window_s)))
    y = np.array([int(w.label) for w in gesture_windows])
    samples = zip(noise_session.timestamps_ms.tolist(), noise_session.rssi_dbm.tolist())
    # windows stopped by the variance gate are already Noise; only the rest need thresholds
    passed = [z for _, z in map(rec.classify, window_stream(samples, rec.windowing)) if z is not None]
    Z = np.stack(passed) if passed else np.zeros((0, 3))
    return calibrate_thresholds(G, y, Z, recall_retention)


def soak(recognizer: Recognizer, timestamps_ms, rssi_dbm, end_ms: float | None = None):
    """Run a gesture-free recording through the online chain; one decision per hop."""
    return list(recognize_stream(zip(timestamps_ms.tolist(), rssi_dbm.tolist()), recognizer,
                                 start_ms=float(timestamps_ms[0]) if len(timestamps_ms) else None,
                                 end_ms=end_ms))


def decision_counts(decisions) -> dict[GestureLabel, int]:
    counts = {lab: 0 for lab in LABEL_ORDER}
    for _, lab in decisions:
        counts[lab] += 1
    return counts
