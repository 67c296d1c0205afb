"""Online recognition chain.

samples -> overlapping windows -> variance gate -> preprocessing
-> classifier logits -> logits thresholds -> decision rules
"""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from rssi_gestures.labels import GESTURES, N_CLASSES, GestureLabel

NOISE = GestureLabel.NOISE
SWIPE, PUSH, PULL = GESTURES


@dataclass(frozen=True)
class WindowingConfig:
    window_s: float = 4.0
    hop_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.hop_s <= self.window_s:
            raise ValueError(f"need 0 < hop_s <= window_s, got hop_s={self.hop_s}, window_s={self.window_s}")


@dataclass(frozen=True)
class Window:
    start_ms: float
    duration_ms: float
    timestamps_ms: np.ndarray
    rssi_dbm: np.ndarray

    def __len__(self):
        return len(self.timestamps_ms)

    @property
    def start_s(self) -> float:
        return self.start_ms / 1000.0


def as_window(obj, window_s: float | None = None) -> Window:
    """Wrap a labelled window (or anything with timestamps/values) as a ``Window``."""
    if isinstance(obj, Window):
        return obj
    t = np.asarray(obj.timestamps_ms)
    start = getattr(obj, "start_ms", t[0] if len(t) else 0)
    if window_s is None:
        duration = float(t[-1] - start) if len(t) else 0.0
    else:
        duration = window_s * 1000.0
    return Window(float(start), duration, t, np.asarray(obj.rssi_dbm, dtype=float))


def window_stream(samples: Iterable, cfg: WindowingConfig, start_ms: float | None = None,
                  end_ms: float | None = None) -> Iterator[Window]:
    """Yield a window every ``hop_s`` holding the samples in ``[t, t + window_s)``.

    ``samples`` yields ``(timestamp_ms, rssi_dbm)`` pairs with nondecreasing
    timestamps. A window is emitted once a sample at or past its end arrives,
    or at end of stream if its end does not exceed ``end_ms`` (default: the
    last timestamp seen).
    """
    width = cfg.window_s * 1000.0
    hop = cfg.hop_s * 1000.0
    buf: collections.deque = collections.deque()
    k = 0
    origin = start_ms
    last_t = None

    def emit(k):
        lo = origin + k * hop
        while buf and buf[0][0] < lo:
            buf.popleft()
        picked = [s for s in buf if s[0] < lo + width]
        t = np.array([s[0] for s in picked], dtype=np.int64)
        v = np.array([s[1] for s in picked], dtype=float)
        return Window(lo, width, t, v)

    for t, v in samples:
        if origin is None:
            origin = float(t)
        if last_t is not None and t < last_t:
            raise ValueError(f"timestamps went backwards: {t} after {last_t}")
        last_t = t
        while t >= origin + k * hop + width:
            yield emit(k)
            k += 1
        buf.append((t, v))

    if origin is None:
        return
    limit = last_t if end_ms is None else end_ms
    while origin + k * hop + width <= limit:
        yield emit(k)
        k += 1


@dataclass(frozen=True)
class GateConfig:
    variance_threshold: float = 0.0

    def __post_init__(self):
        if not self.variance_threshold >= 0:
            raise ValueError("variance_threshold must be non-negative")


def window_variance(values) -> float:
    """Population variance; NaN for an empty window."""
    values = np.asarray(values, dtype=float)
    return float(np.var(values)) if len(values) else math.nan


def variance_gate(values, cfg: GateConfig) -> bool:
    """True when the window is active enough to classify; False means Noise."""
    var = window_variance(values)
    return not math.isnan(var) and var >= cfg.variance_threshold


def resample_nearest(timestamps, values, targets) -> np.ndarray:
    """Pick, for each target time, the value of the nearest sample (earlier on ties)."""
    t = np.asarray(timestamps, dtype=float)
    v = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    right = np.clip(np.searchsorted(t, targets, side="left"), 0, len(t) - 1)
    left = np.clip(right - 1, 0, len(t) - 1)
    use_left = np.abs(targets - t[left]) <= np.abs(t[right] - targets)
    return v[np.where(use_left, left, right)]


def target_instants(start_ms: float, duration_ms: float, tau: int) -> np.ndarray:
    """``tau`` instants spaced ``duration/tau`` apart, centred in their slots."""
    return start_ms + (np.arange(tau) + 0.5) * (duration_ms / tau)


def featurize(window, tau: int, window_s: float | None = None) -> np.ndarray:
    """Mean-subtract and resample a window to ``tau`` values (before scaling)."""
    w = as_window(window, window_s)
    if len(w) == 0:
        raise ValueError("cannot preprocess an empty window")
    centred = w.rssi_dbm - w.rssi_dbm.mean()
    return resample_nearest(w.timestamps_ms, centred, target_instants(w.start_ms, w.duration_ms, tau))


def featurize_many(windows: Sequence, tau: int, window_s: float | None = None) -> np.ndarray:
    if not windows:
        return np.zeros((0, tau))
    return np.stack([featurize(w, tau, window_s) for w in windows])


@dataclass(frozen=True)
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise ValueError("means and stds must be 1-D arrays of equal length")
        if np.any(~(self.stds > 0)):
            raise ValueError("scaler stds must be positive")

    @property
    def tau(self) -> int:
        return len(self.means)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.means) / self.stds

    @classmethod
    def identity(cls, tau: int) -> "Scaler":
        return cls(np.zeros(tau), np.ones(tau))


def fit_scaler(X, eps: float | None = None) -> Scaler:
    """Per-feature mean and population std over training rows.

    A zero-variance feature is an error unless ``eps`` is given, in which
    case stds are clamped from below to ``eps``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_scaler needs a 2-D matrix with at least 2 rows")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    if eps is not None:
        stds = np.maximum(stds, eps)
    elif np.any(stds == 0):
        bad = np.flatnonzero(stds == 0).tolist()
        raise ValueError(f"zero-variance features at positions {bad}; training data is degenerate")
    return Scaler(means, stds)


def preprocess(window, scaler: Scaler, tau: int | None = None, window_s: float | None = None) -> np.ndarray:
    tau = scaler.tau if tau is None else tau
    if tau != scaler.tau:
        raise ValueError(f"scaler was fitted for tau={scaler.tau}, asked for tau={tau}")
    return scaler.transform(featurize(window, tau, window_s))


def threshold_logits(logits, thresholds) -> GestureLabel:
    """Arg-max class if its logit clears that class's threshold, else Noise."""
    logits = np.asarray(logits, dtype=float)
    k = int(np.argmax(logits))
    if logits[k] >= thresholds[k]:
        return GestureLabel(k)
    return NOISE


DISABLED_THRESHOLDS = (-math.inf,) * N_CLASSES


@dataclass(frozen=True)
class DecisionState:
    history: tuple[GestureLabel, ...] = ()
    last_gesture: GestureLabel | None = None
    maxlen: int = 2

    @property
    def predecessor(self) -> GestureLabel:
        return self.history[-1] if self.history else NOISE


def _accept(predecessor: GestureLabel, candidate: GestureLabel) -> bool:
    if candidate is NOISE:
        return True
    if candidate is PULL:
        return predecessor in (PUSH, PULL)
    if candidate == predecessor:
        return True
    return predecessor is NOISE


def decision_step(state: DecisionState, candidate: GestureLabel,
                  noise_transparent_pull: bool = False) -> tuple[GestureLabel, DecisionState]:
    """Accept or reject ``candidate`` given recent accepted predictions.

    Rules: Pull only directly after Push (or a continuing Pull); a change of
    label is rejected unless it is Swipe/Push after Noise or Pull after Push;
    Noise is always accepted. With ``noise_transparent_pull`` a Pull may also
    follow Noise windows if the last accepted gesture was a Push.
    """
    candidate = GestureLabel(candidate)
    pred = state.predecessor
    ok = _accept(pred, candidate)
    if not ok and noise_transparent_pull and candidate is PULL and pred is NOISE:
        ok = state.last_gesture is PUSH
    accepted = candidate if ok else NOISE
    history = (state.history + (accepted,))[-state.maxlen:]
    last = accepted if accepted is not NOISE else state.last_gesture
    return accepted, DecisionState(history, last, state.maxlen)


class DecisionFilter:
    """Mutable single-consumer wrapper around ``decision_step``."""

    def __init__(self, noise_transparent_pull: bool = False):
        self.state = DecisionState()
        self.noise_transparent_pull = noise_transparent_pull

    def __call__(self, candidate: GestureLabel) -> GestureLabel:
        accepted, self.state = decision_step(self.state, candidate, self.noise_transparent_pull)
        return accepted


@dataclass
class Recognizer:
    """Everything the online chain needs besides the samples."""

    model: object
    scaler: Scaler
    gate: GateConfig = field(default_factory=GateConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    thresholds: tuple[float, ...] = DISABLED_THRESHOLDS
    noise_transparent_pull: bool = False

    @property
    def tau(self) -> int:
        return self.scaler.tau

    def classify(self, window: Window) -> tuple[GestureLabel, np.ndarray | None]:
        """Gate, preprocess, infer and threshold one window (no decision rules)."""
        if not variance_gate(window.rssi_dbm, self.gate):
            return NOISE, None
        x = preprocess(window, self.scaler)
        logits = np.asarray(self.model.logits(x[None, :]))[0]
        return threshold_logits(logits, self.thresholds), logits


def recognize_stream(samples: Iterable, recognizer: Recognizer, start_ms: float | None = None,
                     end_ms: float | None = None) -> Iterator[tuple[float, GestureLabel]]:
    """Yield ``(window_start_s, accepted_label)`` once per hop."""
    decide = DecisionFilter(recognizer.noise_transparent_pull)
    for window in window_stream(samples, recognizer.windowing, start_ms, end_ms):
        candidate, _ = recognizer.classify(window)
        yield window.start_s, decide(candidate)


def min_window_variance(windows) -> float:
    """Variance gate default: the smallest training-window variance."""
    variances = [window_variance(w.rssi_dbm) for w in windows if len(w.rssi_dbm)]
    if not variances:
        raise ValueError("no non-empty windows to estimate a variance threshold from")
    return float(min(variances))


def calibrate_thresholds(gesture_logits, gesture_labels, noise_logits,
                         recall_retention: float = 0.95) -> tuple[float, ...]:
    """Per-class logit thresholds from held-out gesture and noise windows.

    For each class, pick the threshold that rejects the most noise windows
    whose arg-max is that class while keeping at least ``recall_retention``
    of the class's unthresholded correct predictions; among equally good
    thresholds the lowest wins. The classes decouple because only the arg-max
    class's threshold matters.
    """
    G = np.asarray(gesture_logits, dtype=float).reshape(-1, N_CLASSES)
    y = np.asarray(gesture_labels, dtype=int)
    Z = np.asarray(noise_logits, dtype=float).reshape(-1, N_CLASSES)
    g_arg, z_arg = G.argmax(axis=1), Z.argmax(axis=1)
    thresholds = []
    for k in range(N_CLASSES):
        hits = np.sort(G[(y == k) & (g_arg == k), k])
        noise = Z[z_arg == k, k]
        if len(hits) == 0:
            # nothing to keep: reject every noise window landing on this class
            thresholds.append(float(noise.max()) + 1.0 if len(noise) else -math.inf)
            continue
        keep = int(math.ceil(recall_retention * len(hits) - 1e-9))
        if keep <= 0:
            thresholds.append(float(hits[-1]) + 1.0)
            continue
        # the keep-th largest correct logit is the highest threshold retaining `keep` hits
        ceiling = hits[len(hits) - keep]
        below = noise[noise < ceiling]
        if len(below) == 0:
            thresholds.append(-math.inf)
            continue
        # lowest threshold that rejects exactly as much noise as the ceiling does
        thresholds.append(float(hits[hits > below.max()][0]))
    return tuple(thresholds)
