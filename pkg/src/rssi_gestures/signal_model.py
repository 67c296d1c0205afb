"""Synthetic RSSI streams from a log-distance channel with gesture perturbations.

Mean received power follows the log-distance path loss law; each reading adds
a Gaussian shadowing draw and a Nakagami multipath term expressed in dB.
Hand gestures are modelled as additive attenuation profiles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from rssi_gestures.labels import GESTURES, GestureLabel


@dataclass(frozen=True)
class ChannelParams:
    l0: float = -40.0
    n: float = 2.0
    sigma: float = 1.0
    nakagami_m: float = 4.0
    nakagami_omega: float = 1.0
    distance_m: float = 2.0

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")
        if not self.nakagami_m >= 0.5:
            raise ValueError(f"nakagami_m must be >= 0.5, got {self.nakagami_m}")
        if not self.nakagami_omega > 0:
            raise ValueError(f"nakagami_omega must be positive, got {self.nakagami_omega}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def multipath_enabled(self) -> bool:
        return math.isfinite(self.nakagami_m)

    def noiseless(self) -> "ChannelParams":
        return ChannelParams(self.l0, self.n, 0.0, math.inf, self.nakagami_omega, self.distance_m)


def path_loss_mean(params: ChannelParams, r: float | None = None) -> float:
    """Mean RSS in dBm at distance ``r`` (defaults to ``params.distance_m``)."""
    if r is None:
        r = params.distance_m
    if not r > 0:
        raise ValueError(f"distance must be positive, got {r}")
    return params.l0 - 10.0 * params.n * math.log10(r)


def multipath_db(params: ChannelParams, rng: np.random.Generator, size=None):
    """Nakagami amplitude fade converted to a dB offset relative to sqrt(omega).

    Returns exactly zero when ``nakagami_m`` is infinite.
    """
    if not params.multipath_enabled:
        return 0.0 if size is None else np.zeros(size)
    # Nakagami(m, omega) amplitude is the square root of Gamma(m, omega / m)
    power = rng.gamma(params.nakagami_m, params.nakagami_omega / params.nakagami_m, size)
    return 10.0 * np.log10(np.maximum(power, 1e-300) / params.nakagami_omega)


def sample_rssi(params: ChannelParams, rng: np.random.Generator, size=None):
    """Draw RSS readings in dBm: path loss + shadowing + multipath."""
    mean = path_loss_mean(params)
    if size is None:
        shadow = rng.normal(0.0, params.sigma) if params.sigma > 0 else 0.0
        return float(mean + shadow + multipath_db(params, rng))
    shadow = rng.normal(0.0, params.sigma, size) if params.sigma > 0 else np.zeros(size)
    return mean + shadow + multipath_db(params, rng, size)


class SamplingMode(enum.Enum):
    BEACON_ONLY = "beacon-only"
    INDUCED = "induced"


@dataclass(frozen=True)
class SamplingProfile:
    mode: SamplingMode = SamplingMode.INDUCED
    beacon_interval_ms: float = 102.0
    induced_rate_hz: float = 200.0
    jitter_fraction: float = 0.2

    def __post_init__(self):
        if not self.beacon_interval_ms > 0 or not self.induced_rate_hz > 0:
            raise ValueError("sampling interval and rate must be positive")
        if not 0.0 <= self.jitter_fraction < 1.0:
            raise ValueError(f"jitter_fraction must lie in [0, 1), got {self.jitter_fraction}")

    @classmethod
    def beacon_only(cls, **kw) -> "SamplingProfile":
        return cls(mode=SamplingMode.BEACON_ONLY, **kw)

    @classmethod
    def induced(cls, **kw) -> "SamplingProfile":
        return cls(mode=SamplingMode.INDUCED, **kw)

    @property
    def nominal_interval_ms(self) -> float:
        if self.mode is SamplingMode.BEACON_ONLY:
            return self.beacon_interval_ms
        return 1000.0 / self.induced_rate_hz

    @property
    def nominal_rate_hz(self) -> float:
        return 1000.0 / self.nominal_interval_ms

    def sample_times(self, duration_s: float, rng: np.random.Generator) -> np.ndarray:
        """Integer-millisecond reading times covering ``[0, duration_s)``.

        Readings sit on the nominal grid with uniform jitter of
        ``jitter_fraction`` times the interval; rounding collisions are merged.
        """
        step = self.nominal_interval_ms
        n = int(math.floor(duration_s * 1000.0 / step)) + 1
        t = np.arange(n) * step
        if self.jitter_fraction > 0:
            t = t + rng.uniform(-1.0, 1.0, n) * self.jitter_fraction * step
        t = np.unique(np.round(t).astype(np.int64))
        return t[(t >= 0) & (t < duration_s * 1000.0)]


@dataclass(frozen=True)
class GestureTemplate:
    """Piecewise-linear attenuation profile over normalized gesture time."""

    label: GestureLabel
    duration_s: float
    knots: tuple[float, ...]
    offsets_db: tuple[float, ...]

    def __post_init__(self):
        if self.label is GestureLabel.NOISE:
            raise ValueError("templates describe gestures, not Noise")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if len(self.knots) != len(self.offsets_db) or len(self.knots) < 2:
            raise ValueError("knots and offsets_db must have equal length >= 2")
        if self.knots[0] != 0.0 or self.knots[-1] != 1.0 or any(np.diff(self.knots) < 0):
            raise ValueError("knots must rise from 0 to 1")

    def attenuation(self, u):
        return np.interp(u, self.knots, self.offsets_db)

    def scaled(self, factor: float) -> "GestureTemplate":
        return GestureTemplate(self.label, self.duration_s, self.knots,
                               tuple(factor * v for v in self.offsets_db))


def swipe_template(depth_db: float = 8.0, duration_s: float = 1.5) -> GestureTemplate:
    # two V-shaped dips back to back: over the phone and back again
    return GestureTemplate(GestureLabel.SWIPE, duration_s,
                           (0.0, 0.25, 0.5, 0.75, 1.0),
                           (0.0, -depth_db, 0.0, -depth_db, 0.0))


def push_template(plateau_db: float = 6.0, ramp_s: float = 0.5, hold_s: float = 2.0) -> GestureTemplate:
    total = ramp_s + hold_s
    return GestureTemplate(GestureLabel.PUSH, total, (0.0, ramp_s / total, 1.0),
                           (0.0, -plateau_db, -plateau_db))


def pull_template(plateau_db: float = 6.0, hold_s: float = 2.0, ramp_s: float = 0.5) -> GestureTemplate:
    total = hold_s + ramp_s
    return GestureTemplate(GestureLabel.PULL, total, (0.0, hold_s / total, 1.0),
                           (-plateau_db, -plateau_db, 0.0))


def default_templates() -> dict[GestureLabel, GestureTemplate]:
    return {
        GestureLabel.SWIPE: swipe_template(),
        GestureLabel.PUSH: push_template(),
        GestureLabel.PULL: pull_template(),
    }


@dataclass(frozen=True)
class Annotation:
    label: GestureLabel
    start_s: float
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class SyntheticSession:
    timestamps_ms: np.ndarray
    rssi_dbm: np.ndarray
    annotations: tuple[Annotation, ...] = ()
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.timestamps_ms) != len(self.rssi_dbm):
            raise ValueError("timestamps and values differ in length")
        if len(self.timestamps_ms) > 1 and np.any(np.diff(self.timestamps_ms) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps_ms)

    @property
    def duration_s(self) -> float:
        if len(self) == 0:
            return 0.0
        return (self.timestamps_ms[-1] - self.timestamps_ms[0]) / 1000.0

    def to_log(self, **extra_metadata):
        """Convert to an ingest ``SessionLog`` with extraction metadata."""
        from rssi_gestures.ingest import SessionLog

        meta = {k: str(v) for k, v in self.metadata.items()}
        if self.annotations:
            starts = [a.start_s for a in self.annotations]
            gaps = np.diff(starts)
            meta["start_time_ms"] = str(int(round(starts[0] * 1000)))
            if len(gaps):
                if not np.allclose(gaps, gaps[0]):
                    raise ValueError("annotations are not evenly spaced; no single gap_s")
                meta["gap_s"] = _fmt(gaps[0])
            else:
                meta.setdefault("gap_s", _fmt(self.annotations[0].duration_s))
            meta["labels"] = ",".join(str(a.label) for a in self.annotations)
        if self.seed is not None:
            meta["seed"] = str(self.seed)
        meta.update({k: str(v) for k, v in extra_metadata.items()})
        return SessionLog(meta, self.timestamps_ms.copy(), self.rssi_dbm.copy())


def _fmt(x: float) -> str:
    return repr(float(x)).removesuffix(".0") if float(x).is_integer() else repr(float(x))


def quiet_session(params: ChannelParams, profile: SamplingProfile, duration_s: float,
                  rng: np.random.Generator, quantize: bool = False, seed=None) -> SyntheticSession:
    t = profile.sample_times(duration_s, rng)
    values = sample_rssi(params, rng, len(t))
    if quantize:
        values = np.round(values)
    return SyntheticSession(t, np.asarray(values, dtype=float), (), seed)


def inject_gesture(session: SyntheticSession, template: GestureTemplate, start_s: float) -> SyntheticSession:
    end_s = start_s + template.duration_s
    if len(session) == 0:
        raise ValueError("cannot inject into an empty session")
    t0, t1 = session.timestamps_ms[0] / 1000.0, session.timestamps_ms[-1] / 1000.0
    if start_s < t0 or end_s > t1:
        raise ValueError(f"gesture [{start_s}, {end_s}] s falls outside the session [{t0}, {t1}] s")
    for a in session.annotations:
        if start_s < a.end_s and a.start_s < end_s:
            raise ValueError(f"gesture at {start_s} s overlaps existing {a.label} at {a.start_s} s")

    t_s = session.timestamps_ms / 1000.0
    inside = (t_s >= start_s) & (t_s <= end_s)
    values = session.rssi_dbm.copy()
    values[inside] += template.attenuation((t_s[inside] - start_s) / template.duration_s)
    annotations = tuple(sorted(session.annotations + (Annotation(template.label, start_s, template.duration_s),),
                               key=lambda a: a.start_s))
    return SyntheticSession(session.timestamps_ms, values, annotations, session.seed, dict(session.metadata))


def generate_dataset(params: ChannelParams, profile: SamplingProfile,
                     templates: dict[GestureLabel, GestureTemplate] | None = None,
                     per_class_count: int = 300, gap_s: float = 10.0, seed: int = 0,
                     first_start_s: float | None = None, quantize: bool = False) -> SyntheticSession:
    """A labelled recording: gestures every ``gap_s`` seconds in shuffled class order.

    The first gesture starts at ``first_start_s`` (default ``gap_s``) and the
    recording runs one further gap past the last gesture start.
    """
    templates = default_templates() if templates is None else templates
    if per_class_count <= 0:
        raise ValueError("per_class_count must be positive")
    longest = max(t.duration_s for t in templates.values())
    if gap_s < longest:
        raise ValueError(f"gap_s={gap_s} is shorter than the longest template ({longest} s)")
    first = gap_s if first_start_s is None else first_start_s

    rng = np.random.default_rng(seed)
    order = np.repeat([lab for lab in GESTURES if lab in templates], per_class_count)
    order = rng.permutation(order)
    duration = first + gap_s * len(order)
    session = quiet_session(params, profile, duration, rng, quantize=False, seed=seed)

    values = session.rssi_dbm.copy()
    t_s = session.timestamps_ms / 1000.0
    annotations = []
    for k, lab in enumerate(order):
        tpl = templates[GestureLabel(int(lab))]
        start = first + k * gap_s
        lo = np.searchsorted(t_s, start, side="left")
        hi = np.searchsorted(t_s, start + tpl.duration_s, side="right")
        values[lo:hi] += tpl.attenuation((t_s[lo:hi] - start) / tpl.duration_s)
        annotations.append(Annotation(tpl.label, start, tpl.duration_s))
    if quantize:
        values = np.round(values)
    meta = {"profile": profile.mode.value, "distance_m": _fmt(params.distance_m)}
    return SyntheticSession(session.timestamps_ms, values, tuple(annotations), seed, meta)


def background_session(params: ChannelParams, profile: SamplingProfile, duration_s: float, seed: int,
                       events_per_min: float = 2.0, depth_db: tuple[float, float] = (0.5, 2.0),
                       event_s: tuple[float, float] = (2.0, 6.0), quantize: bool = False) -> SyntheticSession:
    """Gesture-free recording with occasional slow bumps from people moving nearby."""
    rng = np.random.default_rng(seed)
    session = quiet_session(params, profile, duration_s, rng, seed=seed)
    t_s = session.timestamps_ms / 1000.0
    values = session.rssi_dbm.copy()
    n_events = rng.poisson(events_per_min * duration_s / 60.0)
    for _ in range(n_events):
        centre = rng.uniform(0.0, duration_s)
        width = rng.uniform(*event_s)
        depth = rng.uniform(*depth_db) * rng.choice([-1.0, 1.0])
        u = (t_s - centre) / width
        bump = np.where(np.abs(u) < 0.5, 0.5 * (1.0 + np.cos(2.0 * np.pi * u)), 0.0)
        values += depth * bump
    if quantize:
        values = np.round(values)
    return SyntheticSession(session.timestamps_ms, values, (), seed,
                            {"profile": profile.mode.value, "scenario": "background"})
