"""k-nearest-neighbour classification under dynamic time warping."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from rssi_gestures.labels import GestureLabel


@dataclass(frozen=True)
class DtwConfig:
    k: int = 1
    band: int | None = None
    metric: str = "l1"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.band is not None and self.band < 0:
            raise ValueError("band must be non-negative")
        if self.metric not in ("l1", "l2"):
            raise ValueError(f"unknown local cost {self.metric!r}")


def _cost(metric: str):
    if metric == "l1":
        return lambda x, y: abs(x - y)
    return lambda x, y: (x - y) * (x - y)


def _effective_band(band, n: int, m: int):
    if band is None:
        return None
    # a path must still be able to reach (n, m)
    return max(band, abs(n - m))


def dtw_distance(a, b, cfg: DtwConfig = DtwConfig()) -> float:
    """Classic DTW with steps (i-1, j), (i, j-1), (i-1, j-1).

    With ``cfg.band`` set, cells with ``|i - j| > band`` are excluded
    (widened to the length difference so a path always exists).
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if not a or not b:
        raise ValueError("DTW needs two non-empty series")
    n, m = len(a), len(b)
    w = _effective_band(cfg.band, n, m)
    cost = _cost(cfg.metric)
    inf = math.inf
    prev = [0.0] + [inf] * m
    for i in range(1, n + 1):
        cur = [inf] * (m + 1)
        lo, hi = (1, m) if w is None else (max(1, i - w), min(m, i + w))
        ai = a[i - 1]
        for j in range(lo, hi + 1):
            best = min(prev[j], cur[j - 1], prev[j - 1])
            cur[j] = cost(ai, b[j - 1]) + best
        prev = cur
    return prev[m]


def dtw_to_many(query, references, cfg: DtwConfig = DtwConfig()) -> np.ndarray:
    """DTW from one query to each row of ``references`` (equal-length rows).

    Same recurrence as ``dtw_distance``, vectorised across references.
    """
    q = np.asarray(query, dtype=float)
    R = np.atleast_2d(np.asarray(references, dtype=float))
    if q.size == 0 or R.shape[1] == 0:
        raise ValueError("DTW needs non-empty series")
    n, m = len(q), R.shape[1]
    w = _effective_band(cfg.band, n, m)
    local = np.abs(q[:, None, None] - R.T[None, :, :]) if cfg.metric == "l1" \
        else (q[:, None, None] - R.T[None, :, :]) ** 2
    prev = np.full((m + 1, len(R)), np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = np.full((m + 1, len(R)), np.inf)
        lo, hi = (1, m) if w is None else (max(1, i - w), min(m, i + w))
        diag = np.minimum(prev[lo - 1:hi], prev[lo:hi + 1])
        for j in range(lo, hi + 1):
            cur[j] = local[i - 1, j - 1] + np.minimum(diag[j - lo], cur[j - 1])
        prev = cur
    return prev[m]


class KnnDtw:
    def __init__(self, cfg: DtwConfig = DtwConfig()):
        self.cfg = cfg
        self.X = None
        self.y = None

    def fit(self, X, y) -> "KnnDtw":
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise ValueError("training set is empty")
        self.X = X
        self.y = np.asarray(y, dtype=int)
        return self

    def predict_one(self, query) -> GestureLabel:
        return knn_vote(dtw_to_many(query, self.X, self.cfg), self.y, self.cfg.k)

    def predict(self, Q) -> np.ndarray:
        return np.array([int(self.predict_one(q)) for q in np.atleast_2d(Q)])


def knn_vote(distances, labels, k: int) -> GestureLabel:
    """Majority label among the ``k`` nearest; ties by smaller mean distance, then class order."""
    distances = np.asarray(distances, dtype=float)
    labels = np.asarray(labels, dtype=int)
    k = min(k, len(distances))
    nearest = np.argsort(distances, kind="stable")[:k]
    votes = Counter(labels[nearest].tolist())
    top = max(votes.values())
    tied = [c for c, v in votes.items() if v == top]

    def key(c):
        return (float(np.mean(distances[nearest][labels[nearest] == c])), c)

    return GestureLabel(min(tied, key=key))


def knn_predict(train_X, train_y, query, cfg: DtwConfig = DtwConfig()) -> GestureLabel:
    if len(train_X) == 0:
        raise ValueError("training set is empty")
    return knn_vote(dtw_to_many(query, train_X, cfg), train_y, cfg.k)
