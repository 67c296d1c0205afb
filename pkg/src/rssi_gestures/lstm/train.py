"""Minibatch training loop and cross-validated grid search."""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rssi_gestures.labels import N_CLASSES
from rssi_gestures.lstm.model import LstmModel, backward, dropout_masks, forward, loss_nll
from rssi_gestures.lstm.optim import AdamState, adam_step, clip_gradients
from rssi_gestures.pipeline import featurize_many, fit_scaler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 200
    layers: int = 2
    learning_rate: float = 0.001
    batch_size: int = 50
    dropout: float = 0.5
    init_range: float = 0.08
    max_grad_norm: float = 25.0
    iterations: int = 600
    forget_bias: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden", "layers", "learning_rate", "batch_size", "init_range",
                     "max_grad_norm", "iterations"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def strict(cls, **kw) -> "TrainConfig":
        """Plain uniform initialisation with no forget-gate offset."""
        return cls(forget_bias=0.0, **kw)


def n_parameters(tau: int, hidden: int, layers: int, classes: int = N_CLASSES) -> int:
    total = 0
    for layer in range(layers):
        n_in = 1 if layer == 0 else hidden
        total += (n_in + hidden + 1) * 4 * hidden
    return total + (hidden + 1) * classes


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffled every pass, short tails dropped."""
    size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for lo in range(0, n - size + 1, size):
            yield order[lo:lo + size]


def train(X, y, config: TrainConfig = TrainConfig(), model: LstmModel | None = None,
          callback=None) -> tuple[LstmModel, np.ndarray]:
    """Fit on standardized features ``X`` ``(D, tau)`` with labels ``y``.

    One iteration is one minibatch step. Returns the model and the
    per-iteration training loss.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training needs a non-empty 2-D feature matrix")
    if len(X) != len(y):
        raise ValueError("features and labels differ in length")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = LstmModel.initialize(X.shape[1], config.hidden, config.layers, rng,
                                     config.init_range, config.forget_bias)
    state = AdamState()
    losses = np.empty(config.iterations)
    batches = _batches(len(X), config.batch_size, rng)
    for it in range(config.iterations):
        idx = next(batches)
        masks = dropout_masks(model, len(idx), config.dropout, rng)
        logits, cache = forward(model, X[idx], masks, keep_cache=True)
        losses[it] = loss_nll(logits, y[idx])
        grads = backward(model, cache, y[idx])
        grads, norm = clip_gradients(grads, config.max_grad_norm)
        adam_step(model.params, grads, state, config.learning_rate)
        model.touch()
        if callback is not None:
            callback(it, losses[it], norm)
    return model, losses


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return 100.0 * float(np.mean(y_true == np.asarray(y_pred)))


def stratified_kfold(labels: Sequence[int], folds: int, seed: int) -> list[np.ndarray]:
    """Validation index sets; every sample lands in exactly one fold."""
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(folds)]
    for cls in range(N_CLASSES):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        if len(idx) < folds:
            raise ValueError(f"class {cls} has {len(idx)} samples; every fold needs each class")
        for f, chunk in enumerate(np.array_split(idx, folds)):
            parts[f].extend(chunk.tolist())
    return [np.sort(np.array(p, dtype=int)) for p in parts]


@dataclass
class GridResult:
    params: dict
    fold_scores: list[float]
    n_parameters: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_scores))


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    """Cartesian product of a ``{name: values}`` mapping, in key order."""
    if not grid:
        return [{}]
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cross_validate(X, y, config: TrainConfig, folds: int = 4, seed: int = 0) -> list[float]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    scores = []
    for f, val in enumerate(stratified_kfold(y, folds, seed)):
        tr = np.setdiff1d(np.arange(len(y)), val)
        scaler = fit_scaler(X[tr])
        model, _ = train(scaler.transform(X[tr]), y[tr], config.replace(seed=config.seed + f))
        scores.append(accuracy(y[val], model.predict(scaler.transform(X[val]))))
    return scores


def grid_search_cv(windows: Sequence, grid: Sequence[dict], base: TrainConfig = TrainConfig(),
                   tau: int = 50, window_s: float | None = None, folds: int = 4,
                   seed: int = 0) -> tuple[dict, list[GridResult]]:
    """Score each parameter setting by stratified k-fold accuracy.

    ``windows`` are raw labelled windows; each grid entry may override
    ``tau`` and any ``TrainConfig`` field. Returns the best setting (ties go
    to the model with fewer parameters) and all results in grid order.
    """
    if not grid:
        raise ValueError("parameter grid is empty")
    labels = np.array([int(w.label) for w in windows])
    feature_cache: dict[int, np.ndarray] = {}
    results = []
    for entry in grid:
        entry = dict(entry)
        t = int(entry.get("tau", tau))
        if t not in feature_cache:
            feature_cache[t] = featurize_many(windows, t, window_s)
        cfg = base.replace(**{k: v for k, v in entry.items() if k != "tau"})
        scores = cross_validate(feature_cache[t], labels, cfg, folds, seed)
        results.append(GridResult(entry, scores, n_parameters(t, cfg.hidden, cfg.layers)))
        log.info("grid %s: %.1f%% (+-%.1f)", entry, results[-1].mean, results[-1].std)
    best = min(results, key=lambda r: (-r.mean, r.n_parameters))
    return best.params, results


def mean_std(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std()) if len(values) > 1 else 0.0
