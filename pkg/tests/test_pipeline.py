import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rssi_gestures.labels import GestureLabel
from rssi_gestures.pipeline import (DISABLED_THRESHOLDS, DecisionFilter, DecisionState, GateConfig, Recognizer,
                                    Scaler, Window, WindowingConfig, calibrate_thresholds, decision_step,
                                    featurize, fit_scaler, min_window_variance, preprocess, recognize_stream,
                                    resample_nearest, target_instants, threshold_logits, variance_gate,
                                    window_stream, window_variance)

SWIPE, PUSH, PULL, NOISE = GestureLabel.SWIPE, GestureLabel.PUSH, GestureLabel.PULL, GestureLabel.NOISE


def _stream(seconds, rate_hz=200, value=-40.0):
    step = 1000 // rate_hz
    return [(t, value) for t in range(0, int(seconds * 1000) + 1, step)]


# --- windowing --------------------------------------------------------------

def test_ten_second_stream_gives_seven_windows():
    ws = list(window_stream(_stream(10), WindowingConfig(4, 1)))
    assert [w.start_ms for w in ws] == [0, 1000, 2000, 3000, 4000, 5000, 6000]
    for w in ws:
        assert w.timestamps_ms.min() >= w.start_ms and w.timestamps_ms.max() < w.start_ms + 4000


def test_200hz_window_holds_about_800_samples():
    ws = list(window_stream(_stream(10), WindowingConfig(4, 1)))
    assert all(len(w) == 800 for w in ws)


def test_hop_equal_window_tiles():
    ws = list(window_stream(_stream(12), WindowingConfig(4, 4)))
    assert [w.start_ms for w in ws] == [0, 4000, 8000]
    all_t = np.concatenate([w.timestamps_ms for w in ws])
    assert len(all_t) == len(set(all_t.tolist())) == 2400


def test_gaps_give_empty_windows():
    samples = [(0, -40.0), (9000, -41.0)]
    ws = list(window_stream(samples, WindowingConfig(2, 1)))
    assert len(ws) == 8 and [len(w) for w in ws] == [1, 0, 0, 0, 0, 0, 0, 0]


def test_end_ms_flush():
    ws = list(window_stream(_stream(5), WindowingConfig(4, 1), end_ms=8000))
    assert [w.start_ms for w in ws] == [0, 1000, 2000, 3000, 4000]


def test_backwards_timestamps_rejected():
    with pytest.raises(ValueError):
        list(window_stream([(5, -40.0), (3, -40.0)], WindowingConfig()))


def test_windowing_config_validation():
    with pytest.raises(ValueError):
        WindowingConfig(4, 5)
    with pytest.raises(ValueError):
        WindowingConfig(4, 0)


# --- variance gate ------------------------------------------------------------

def test_gate_examples():
    assert not variance_gate(np.full(10, -40.0), GateConfig(0.1))
    alt = np.array([-40.0, -50.0] * 5)
    assert window_variance(alt) == 25.0
    assert variance_gate(alt, GateConfig(1.0))
    assert not variance_gate(np.array([]), GateConfig(0.0))


def test_gate_is_population_variance():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert window_variance(x) == pytest.approx(1.25)


# --- preprocessing --------------------------------------------------------------

def _window(values, start=0.0, duration=4000.0):
    values = np.asarray(values, dtype=float)
    t = start + np.linspace(0, duration, len(values), endpoint=False).astype(np.int64)
    return Window(start, duration, t, values)


def test_mean_subtraction_example():
    w = _window([-40, -42, -44], duration=3.0)
    out = featurize(w, 3)
    assert np.allclose(out, [2, 0, -2])


def test_800_sample_window_tau_50_spacing():
    w = _window(np.arange(800.0), duration=4000.0)
    targets = target_instants(0.0, 4000.0, 50)
    assert np.allclose(np.diff(targets), 80.0)
    out = featurize(w, 50)
    picked_t = w.timestamps_ms[(out + w.rssi_dbm.mean()).astype(int)]
    assert np.all(np.abs(picked_t - targets) <= 2.5)


def test_resample_nearest_tie_goes_earlier():
    assert resample_nearest([0, 10], [1.0, 2.0], [5.0]).tolist() == [1.0]
    assert resample_nearest([0, 10], [1.0, 2.0], [-3.0, 6.0, 30.0]).tolist() == [1.0, 2.0, 2.0]


def test_preprocess_at_scaler_mean_is_zero():
    w = _window(np.sin(np.linspace(0, 6, 400)) - 40)
    f = featurize(w, 50)
    out = preprocess(w, Scaler(f, np.full(50, 2.0)))
    assert np.array_equal(out, np.zeros(50))


def test_preprocess_rejects_empty_and_tau_mismatch():
    with pytest.raises(ValueError):
        preprocess(Window(0, 4000, np.zeros(0, dtype=np.int64), np.zeros(0)), Scaler.identity(50))
    with pytest.raises(ValueError):
        preprocess(_window([-40, -41]), Scaler.identity(50), tau=25)


window_values = arrays(np.float64, st.integers(1, 10_000), elements=st.floats(-100, -10))


@settings(max_examples=60, deadline=None)
@given(window_values, st.integers(1, 200))
def test_preprocess_length_is_tau(values, tau):
    assert featurize(_window(values), tau).shape == (tau,)


@settings(max_examples=60, deadline=None)
@given(window_values, st.floats(-30, 30))
def test_mean_zero_and_offset_invariance(values, c):
    w = _window(values)
    centred = w.rssi_dbm - w.rssi_dbm.mean()
    span = max(np.ptp(values), 1.0)
    assert abs(centred.mean()) < 1e-9 * span
    shifted = _window(values + c)
    assert np.allclose(featurize(w, 50), featurize(shifted, 50), atol=1e-9 * max(span, abs(c)) * 100)


def test_fit_scaler_symmetric_example():
    s = fit_scaler([[1.0, 3.0], [3.0, 1.0]])
    assert s.means.tolist() == [2.0, 2.0] and s.stds.tolist() == [1.0, 1.0]


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 60)), elements=st.floats(-50, 50)))
def test_self_standardization(X):
    if np.any(X.std(axis=0) < 1e-3):
        return
    Z = fit_scaler(X).transform(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(Z.std(axis=0) - 1.0) < 1e-9)


def test_scaler_uses_training_statistics():
    train = np.array([[0.0, 0.0], [2.0, 4.0]])
    test = np.array([[10.0, 10.0], [12.0, 14.0]])
    s = fit_scaler(train)
    assert np.allclose(s.transform(test), (test - [1, 2]) / [1, 2])


def test_fit_scaler_zero_std():
    X = np.array([[1.0, 2.0], [1.0, 3.0]])
    with pytest.raises(ValueError):
        fit_scaler(X)
    assert fit_scaler(X, eps=1e-6).stds[0] == 1e-6
    with pytest.raises(ValueError):
        fit_scaler([[1.0, 2.0]])


# --- logits thresholds ------------------------------------------------------------

def test_threshold_examples():
    assert threshold_logits([5, 1, 1], [2, 2, 2]) is SWIPE
    assert threshold_logits([1, 1, 1], [2, 2, 2]) is NOISE
    assert threshold_logits([2, 2, 0], [0, 0, 0]) is SWIPE
    assert threshold_logits([0, 2, 2], [0, 0, 0]) is PUSH
    assert threshold_logits([-9, -9, -1], DISABLED_THRESHOLDS) is PULL


ints3 = st.lists(st.integers(-10**6, 10**6), min_size=3, max_size=3)


@given(ints3, ints3, st.integers(-10**6, 10**6))
def test_threshold_shift_invariance(logits, thresholds, c):
    # integer-valued floats keep the shifted comparisons exact
    shifted = threshold_logits(np.array(logits, float) + c, np.array(thresholds, float) + c)
    assert shifted is threshold_logits(np.array(logits, float), np.array(thresholds, float))


# --- decision rules -------------------------------------------------------------

# predecessor -> candidate -> accepted
RULE_TABLE = {
    NOISE: {NOISE: NOISE, SWIPE: SWIPE, PUSH: PUSH, PULL: NOISE},
    SWIPE: {NOISE: NOISE, SWIPE: SWIPE, PUSH: NOISE, PULL: NOISE},
    PUSH: {NOISE: NOISE, SWIPE: NOISE, PUSH: PUSH, PULL: PULL},
    PULL: {NOISE: NOISE, SWIPE: NOISE, PUSH: NOISE, PULL: PULL},
}


@pytest.mark.parametrize("pred,cand", list(itertools.product(RULE_TABLE, repeat=2)))
def test_decision_table(pred, cand):
    accepted, state = decision_step(DecisionState((pred,)), cand)
    assert accepted is RULE_TABLE[pred][cand]
    assert state.history[-1] is accepted


def test_empty_history_counts_as_noise():
    assert decision_step(DecisionState(), SWIPE)[0] is SWIPE
    assert decision_step(DecisionState(), PULL)[0] is NOISE


def test_history_bounded():
    f = DecisionFilter()
    for c in [SWIPE, SWIPE, NOISE, PUSH, PULL]:
        f(c)
    assert f.state.history == (PUSH, PULL)


def test_noise_transparent_pull_flag():
    seq = [PUSH, NOISE, PULL]
    strict, loose = DecisionFilter(), DecisionFilter(noise_transparent_pull=True)
    assert [strict(c) for c in seq] == [PUSH, NOISE, NOISE]
    assert [loose(c) for c in seq] == [PUSH, NOISE, PULL]


@given(st.lists(st.sampled_from([SWIPE, PUSH, PULL, NOISE]), max_size=60))
def test_accepted_pull_always_follows_push_or_pull(candidates):
    f = DecisionFilter()
    out = [f(c) for c in candidates]
    for prev, cur in zip([NOISE] + out, out):
        if cur is PULL:
            assert prev in (PUSH, PULL)


# --- composition ----------------------------------------------------------------

class _FixedModel:
    """Logits that favour one class whenever the window dips."""

    def __init__(self, cls=PUSH):
        self.cls = cls

    def logits(self, X):
        out = np.zeros((len(X), 3))
        out[:, int(self.cls)] = 1.0
        return out


def test_constant_stream_all_noise():
    rec = Recognizer(_FixedModel(), Scaler.identity(50), GateConfig(0.5))
    out = list(recognize_stream(_stream(20), rec))
    assert out and all(lab is NOISE for _, lab in out)
    assert [t for t, _ in out] == list(range(17))


def test_one_injected_push_detected_near_injection():
    from rssi_gestures.signal_model import ChannelParams, SamplingProfile, inject_gesture, push_template, quiet_session
    s = quiet_session(ChannelParams(sigma=0.5, nakagami_m=math.inf), SamplingProfile.induced(), 30.0,
                      np.random.default_rng(0))
    s = inject_gesture(s, push_template(), 12.0)
    rec = Recognizer(_FixedModel(PUSH), Scaler.identity(50), GateConfig(1.0))
    out = list(recognize_stream(zip(s.timestamps_ms.tolist(), s.rssi_dbm.tolist()), rec))
    pushes = [t for t, lab in out if lab is PUSH]
    assert pushes and all(12.0 - 4.0 <= t <= 12.0 + 2.5 for t in pushes)
    assert all(lab in (PUSH, NOISE) for _, lab in out)
    again = list(recognize_stream(zip(s.timestamps_ms.tolist(), s.rssi_dbm.tolist()), rec))
    assert again == out


def test_min_window_variance():
    ws = [_window([-40, -50]), _window([-40, -42]), _window([])]
    assert min_window_variance(ws) == 1.0


# --- calibration ----------------------------------------------------------------

def _brute_force_threshold(hits, noise, retention):
    # oracle: scan every candidate threshold, keep the best noise rejection at the recall floor
    keep = math.ceil(retention * len(hits) - 1e-9)
    best = None
    for thr in sorted(set([-math.inf] + list(hits))):
        if sum(h >= thr for h in hits) < keep:
            continue
        rejected = sum(z < thr for z in noise)
        if best is None or rejected > best[0]:
            best = (rejected, thr)
    return best


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=20), st.lists(st.integers(-20, 20), max_size=20),
       st.sampled_from([0.5, 0.8, 0.95, 1.0]))
def test_calibration_matches_brute_force(hits, noise, retention):
    # class 0 logits; the other two classes sit far below so arg-max is always 0
    G = np.array([[h, -100.0, -100.0] for h in hits], dtype=float)
    Z = np.array([[z, -100.0, -100.0] for z in noise], dtype=float).reshape(-1, 3)
    thr = calibrate_thresholds(G, np.zeros(len(hits), dtype=int), Z, retention)[0]
    rejected, lowest = _brute_force_threshold(hits, noise, retention)
    assert sum(h >= thr for h in hits) >= math.ceil(retention * len(hits) - 1e-9)
    assert sum(z < thr for z in noise) == rejected
    assert thr == lowest


def test_calibration_classes_without_noise_stay_open():
    G = np.array([[5.0, 0, 0], [0, 5.0, 0], [0, 0, 5.0]])
    thr = calibrate_thresholds(G, [0, 1, 2], np.zeros((0, 3)))
    assert thr == (-math.inf,) * 3
