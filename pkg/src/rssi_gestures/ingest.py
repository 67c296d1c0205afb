"""RSSI log files, /proc/net/wireless rows, and gesture window extraction.

Log format (UTF-8, LF line endings)::

    # start_time_ms=10000
    # gap_s=10
    # labels=Swipe,Push,Pull
    0,-40.0
    5,-41.5

Metadata lines are ``# key=value``; ``#`` lines without ``=`` are comments.
Data rows are ``timestamp_ms,rssi_dbm``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from rssi_gestures.labels import GESTURES, GestureLabel

log = logging.getLogger(__name__)

RSSI_MIN_DBM = -120.0
RSSI_MAX_DBM = 0.0


class ParseError(ValueError):
    pass


class RssiSample(NamedTuple):
    timestamp_ms: int
    rssi_dbm: float


@dataclass
class SessionLog:
    metadata: dict[str, str] = field(default_factory=dict)
    timestamps_ms: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rssi_dbm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    skipped: int = 0

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.int64)
        self.rssi_dbm = np.asarray(self.rssi_dbm, dtype=float)

    def __len__(self):
        return len(self.timestamps_ms)

    def __eq__(self, other):
        if not isinstance(other, SessionLog):
            return NotImplemented
        return (self.metadata == other.metadata
                and np.array_equal(self.timestamps_ms, other.timestamps_ms)
                and np.array_equal(self.rssi_dbm, other.rssi_dbm))

    @property
    def samples(self) -> list[RssiSample]:
        return [RssiSample(int(t), float(v)) for t, v in zip(self.timestamps_ms, self.rssi_dbm)]

    @property
    def labels(self) -> list[GestureLabel]:
        raw = self.metadata.get("labels", "").strip()
        return [GestureLabel.parse(s) for s in raw.split(",")] if raw else []

    @property
    def start_time_ms(self) -> int | None:
        v = self.metadata.get("start_time_ms")
        return None if v is None else int(v)

    @property
    def gap_s(self) -> float | None:
        v = self.metadata.get("gap_s")
        return None if v is None else float(v)

    @property
    def session_id(self) -> str:
        return self.metadata.get("session_id", "")


def _decode(data: bytes | str) -> str:
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def parse_rssi_log(data: bytes | str) -> SessionLog:
    """Parse a log; malformed, out-of-range or out-of-order rows are skipped and counted."""
    meta: dict[str, str] = {}
    ts: list[int] = []
    vals: list[float] = []
    skipped = 0
    for line in _decode(data).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        parts = line.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            try:
                t = int(parts[0])
            except ValueError:
                t = int(float(parts[0]))
            v = float(parts[1])
        except (ValueError, OverflowError):
            skipped += 1
            continue
        if not (math.isfinite(v) and RSSI_MIN_DBM <= v <= RSSI_MAX_DBM) or (ts and t < ts[-1]):
            skipped += 1
            continue
        ts.append(t)
        vals.append(v)

    if "labels" in meta and meta["labels"].strip():
        for key in ("start_time_ms", "gap_s"):
            if key not in meta:
                raise ParseError(f"labelled log is missing mandatory metadata key {key!r}")
        try:
            if not float(meta["gap_s"]) > 0:
                raise ParseError("gap_s must be positive")
            int(meta["start_time_ms"])
            [GestureLabel.parse(s) for s in meta["labels"].split(",")]
        except ValueError as e:
            raise ParseError(str(e)) from None
    if skipped:
        log.info("skipped %d malformed rows", skipped)
    return SessionLog(meta, np.array(ts, dtype=np.int64), np.array(vals, dtype=float), skipped)


def serialize_rssi_log(session: SessionLog) -> bytes:
    lines = []
    for key, value in session.metadata.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"metadata entry {key!r} cannot be written")
        lines.append(f"# {key}={value}")
    lines.extend(f"{int(t)},{float(v)!r}" for t, v in zip(session.timestamps_ms, session.rssi_dbm))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def read_rssi_log(path) -> SessionLog:
    session = parse_rssi_log(Path(path).read_bytes())
    session.metadata.setdefault("session_id", Path(path).stem)
    return session


def write_rssi_log(path, session: SessionLog) -> None:
    Path(path).write_bytes(serialize_rssi_log(session))


def adapt_delimited(text: bytes | str, *, time_column: int = 0, rssi_column: int = 1,
                    time_scale_ms: float = 1.0, metadata: dict[str, str] | None = None) -> SessionLog:
    """Rewrite a generic delimited table (comma, semicolon, tab or spaces) into a log.

    Header rows and rows that do not parse are skipped. ``time_scale_ms``
    converts the time column to milliseconds (1000 for seconds).
    """
    rows = []
    for line in _decode(text).splitlines():
        fields = [f for f in re.split(r"[,;\t ]+", line.strip()) if f]
        try:
            t = float(fields[time_column]) * time_scale_ms
            v = float(fields[rssi_column])
        except (ValueError, IndexError):
            continue
        rows.append(f"{int(t)},{v!r}")
    head = [f"# {k}={v}" for k, v in (metadata or {}).items()]
    return parse_rssi_log("\n".join(head + rows))


class WirelessEntry(NamedTuple):
    interface: str
    link_quality: float
    level_dbm: float
    noise_dbm: float


def _num(token: str) -> float:
    return float(token.rstrip(".*+"))


def parse_proc_wireless_row(line: str) -> WirelessEntry:
    """Parse one interface row of the wireless-extensions table."""
    if ":" not in line:
        raise ParseError(f"not an interface row: {line!r}")
    name, rest = line.split(":", 1)
    fields = rest.split()
    try:
        int(fields[0], 16)
        quality, level, noise = (_num(f) for f in fields[1:4])
    except (ValueError, IndexError):
        raise ParseError(f"expected status, link, level and noise columns in {line!r}") from None
    return WirelessEntry(name.strip(), quality, level, noise)


def parse_proc_wireless(data: bytes | str, errors: str = "raise") -> list[WirelessEntry]:
    """Parse ``/proc/net/wireless``: two header lines, then one row per interface.

    With ``errors="skip"`` malformed rows are logged and dropped.
    """
    entries = []
    for line in _decode(data).splitlines()[2:]:
        if not line.strip():
            continue
        try:
            entries.append(parse_proc_wireless_row(line))
        except ParseError:
            if errors != "skip":
                raise
            log.warning("skipping malformed wireless row %r", line)
    return entries


@dataclass(frozen=True)
class LabeledWindow:
    label: GestureLabel
    timestamps_ms: np.ndarray
    rssi_dbm: np.ndarray
    session_id: str = ""
    start_ms: int = 0

    def __len__(self):
        return len(self.timestamps_ms)


class WindowList(list):
    """List of windows that also records how many were dropped."""

    dropped: int = 0


def extract_gesture_windows(session: SessionLog, window_s: float) -> WindowList:
    """Cut the k-th window at ``[start + k*gap, start + k*gap + window_s)``."""
    if not window_s > 0:
        raise ValueError("window_s must be positive")
    labels = session.labels
    if session.start_time_ms is None or session.gap_s is None:
        raise ValueError("session lacks start_time_ms/gap_s metadata")
    out = WindowList()
    if not labels:
        return out
    t = session.timestamps_ms
    last = t[-1] if len(t) else -np.inf
    width_ms = window_s * 1000.0
    for k, lab in enumerate(labels):
        lo_ms = session.start_time_ms + k * session.gap_s * 1000.0
        hi_ms = lo_ms + width_ms
        if hi_ms > last:
            out.dropped += 1
            continue
        lo, hi = np.searchsorted(t, [lo_ms, hi_ms], side="left")
        out.append(LabeledWindow(lab, t[lo:hi].copy(), session.rssi_dbm[lo:hi].copy(),
                                 session.session_id, int(round(lo_ms))))
    if out.dropped:
        log.warning("dropped %d windows running past the end of session %r", out.dropped, session.session_id)
    return out


def stratified_split_indices(labels: Sequence[int], ratio: float, rng: np.random.Generator):
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 2:
            raise ValueError(f"class {GestureLabel(int(cls))} has fewer than 2 members; cannot stratify")
        idx = rng.permutation(idx)
        n_train = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def split_train_test(windows: Sequence, ratio: float = 0.75, seed: int = 0, labels=None):
    """Stratified random split into ``(train, test)`` lists."""
    labels = [w.label for w in windows] if labels is None else labels
    train_idx, test_idx = stratified_split_indices(labels, ratio, np.random.default_rng(seed))
    return [windows[i] for i in train_idx], [windows[i] for i in test_idx]


def load_windows(paths, window_s: float) -> list[LabeledWindow]:
    windows = []
    for p in paths:
        windows.extend(extract_gesture_windows(read_rssi_log(p), window_s))
    return windows


def class_counts(windows) -> dict[GestureLabel, int]:
    return {g: sum(1 for w in windows if w.label == g) for g in GESTURES}
