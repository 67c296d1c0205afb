"""Live RSSI sources and the ICMP echo traffic inducer."""

from __future__ import annotations

import collections
import errno
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol

from rssi_gestures.ingest import ParseError, RssiSample, SessionLog, parse_proc_wireless

log = logging.getLogger(__name__)

PROC_WIRELESS = "/proc/net/wireless"


class RssiSource(Protocol):
    def next_sample(self) -> RssiSample | None:
        """Next reading, or None at end of stream."""


def iter_source(source: RssiSource) -> Iterator[tuple[int, float]]:
    while (s := source.next_sample()) is not None:
        yield s.timestamp_ms, s.rssi_dbm


class ReplaySource:
    """Replays a recorded session sample by sample, timestamps untouched."""

    def __init__(self, session: SessionLog):
        self._t = session.timestamps_ms
        self._v = session.rssi_dbm
        self._i = 0

    def next_sample(self) -> RssiSample | None:
        if self._i >= len(self._t):
            return None
        s = RssiSample(int(self._t[self._i]), float(self._v[self._i]))
        self._i += 1
        return s


class SyntheticSource(ReplaySource):
    """Streams a synthesized session (see ``signal_model``)."""

    def __init__(self, session):
        super().__init__(SessionLog({}, session.timestamps_ms, session.rssi_dbm))


class BoundedSampleQueue:
    """Single-producer single-consumer queue that drops the oldest sample when full."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._buf: collections.deque = collections.deque()
        self._capacity = capacity
        self._cond = threading.Condition()
        self._closed = False
        self.dropped = 0

    def put(self, sample: RssiSample) -> None:
        with self._cond:
            if len(self._buf) >= self._capacity:
                self._buf.popleft()
                self.dropped += 1
            self._buf.append(sample)
            self._cond.notify()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def get(self, timeout: float | None = None) -> RssiSample | None:
        """Block for the next sample; None once closed and drained (or on timeout)."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._buf or self._closed, timeout):
                return None
            return self._buf.popleft() if self._buf else None

    def __len__(self):
        return len(self._buf)


def _read_level(path: Path, interface: str | None) -> float | None:
    entries = parse_proc_wireless(path.read_bytes(), errors="skip")
    for e in entries:
        if interface is None or e.interface == interface:
            return e.level_dbm
    return None


def poll_rssi(path=PROC_WIRELESS, rate_hz: float = 200.0, interface: str | None = None,
              stop: threading.Event | None = None, max_samples: int | None = None,
              clock=time.monotonic) -> Iterator[RssiSample]:
    """Read the wireless pseudo-file ``rate_hz`` times a second.

    Every successful read yields a sample (repeated kernel values are not
    deduplicated). Timestamps are milliseconds since polling began. The
    stream ends when ``stop`` is set, after ``max_samples``, or when the file
    disappears.
    """
    if not rate_hz > 0:
        raise ValueError("rate_hz must be positive")
    path = Path(path)
    stop = stop or threading.Event()
    interval = 1.0 / rate_hz
    t0 = clock()
    deadline = t0
    emitted = 0
    last_ms = -1
    while not stop.is_set():
        try:
            level = _read_level(path, interface)
        except FileNotFoundError:
            log.warning("%s disappeared; ending RSSI stream after %d samples", path, emitted)
            return
        except (OSError, ParseError, UnicodeDecodeError) as e:
            log.warning("could not read %s: %s", path, e)
            level = None
        if level is not None:
            ts = max(int((clock() - t0) * 1000), last_ms)
            last_ms = ts
            yield RssiSample(ts, level)
            emitted += 1
            if max_samples is not None and emitted >= max_samples:
                return
        deadline += interval
        delay = deadline - clock()
        if delay < -1.0:
            deadline = clock()
        elif delay > 0:
            stop.wait(delay)


class PollerThread(threading.Thread):
    """Runs ``poll_rssi`` in the background, feeding a ``BoundedSampleQueue``."""

    def __init__(self, queue: BoundedSampleQueue, path=PROC_WIRELESS, rate_hz: float = 200.0,
                 interface: str | None = None):
        super().__init__(daemon=True, name="rssi-poller")
        self.queue = queue
        self.stop_event = threading.Event()
        self._args = (path, rate_hz, interface)

    def run(self):
        try:
            for sample in poll_rssi(*self._args, stop=self.stop_event):
                self.queue.put(sample)
        finally:
            self.queue.close()

    def stop(self):
        self.stop_event.set()


class QueueSource:
    def __init__(self, queue: BoundedSampleQueue, timeout: float | None = None):
        self.queue = queue
        self.timeout = timeout

    def next_sample(self) -> RssiSample | None:
        return self.queue.get(self.timeout)


# --- traffic induction ------------------------------------------------------

ICMP_ECHO_REQUEST = 8


class InducerPermissionError(PermissionError):
    pass


@dataclass(frozen=True)
class InducerConfig:
    target: str = "192.168.1.1"
    rate_hz: float = 700.0
    payload_bytes: int = 56
    allow_udp_fallback: bool = True
    udp_port: int = 33434

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if not 0 <= self.payload_bytes <= 65000:
            raise ValueError("payload_bytes out of range")


@dataclass
class InducerStats:
    mode: str
    sent: int = 0
    errors: int = 0
    elapsed_s: float = 0.0

    @property
    def achieved_rate_hz(self) -> float:
        return self.sent / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def format(self) -> str:
        return "\n".join([f"mode={self.mode}", f"sent={self.sent}", f"errors={self.errors}",
                          f"elapsed_s={self.elapsed_s:.3f}", f"achieved_rate_hz={self.achieved_rate_hz:.1f}"])


def icmp_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    total = (total >> 16) + (total & 0xFFFF)
    total += total >> 16
    return ~total & 0xFFFF


def echo_request(ident: int, seq: int, payload: bytes) -> bytes:
    header = struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, 0, ident & 0xFFFF, seq & 0xFFFF)
    csum = icmp_checksum(header + payload)
    return struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, csum, ident & 0xFFFF, seq & 0xFFFF) + payload


def open_probe_socket(cfg: InducerConfig) -> tuple[socket.socket, str]:
    """Unprivileged ICMP datagram socket, else raw ICMP, else UDP probes."""
    denied = []
    for mode, kind in (("icmp-dgram", socket.SOCK_DGRAM), ("icmp-raw", socket.SOCK_RAW)):
        try:
            s = socket.socket(socket.AF_INET, kind, socket.IPPROTO_ICMP)
            s.setblocking(False)
            return s, mode
        except PermissionError as e:
            denied.append(f"{mode}: {e}")
        except OSError as e:
            if e.errno not in (errno.EPERM, errno.EACCES, errno.EPROTONOSUPPORT):
                raise
            denied.append(f"{mode}: {e}")
    if not cfg.allow_udp_fallback:
        raise InducerPermissionError(
            "cannot open an ICMP socket (" + "; ".join(denied) + "). Run as root, grant CAP_NET_RAW, "
            "or widen net.ipv4.ping_group_range to include your group.")
    log.warning("ICMP unavailable (%s); falling back to UDP probes, which induce less reply traffic",
                "; ".join(denied))
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.setblocking(False)
    return s, "udp"


def induce(cfg: InducerConfig, stop: threading.Event, duration_s: float | None = None,
           clock=time.monotonic) -> InducerStats:
    """Send paced echo requests until ``stop`` is set or ``duration_s`` elapses.

    Pacing sleeps until each absolute deadline, so the loop never spins and
    a stop request is noticed within one interval. Send failures (e.g. an
    unreachable target) are counted and the loop continues.
    """
    address = socket.gethostbyname(cfg.target)
    sock, mode = open_probe_socket(cfg)
    stats = InducerStats(mode)
    payload = bytes(cfg.payload_bytes)
    ident = os.getpid() & 0xFFFF
    interval = 1.0 / cfg.rate_hz
    t0 = clock()
    deadline = t0
    seq = 0
    try:
        while not stop.is_set():
            now = clock()
            if duration_s is not None and now - t0 >= duration_s:
                break
            try:
                if mode == "udp":
                    sock.sendto(payload, (address, cfg.udp_port))
                else:
                    sock.sendto(echo_request(ident, seq, payload), (address, 0))
                stats.sent += 1
            except OSError:
                stats.errors += 1
            seq += 1
            _drain(sock)
            deadline += interval
            delay = deadline - clock()
            if delay < -1.0:
                deadline = clock()
            elif delay > 0:
                if duration_s is not None:
                    delay = min(delay, max(0.0, t0 + duration_s - clock()))
                stop.wait(delay)
    finally:
        stats.elapsed_s = clock() - t0
        sock.close()
    return stats


def _drain(sock: socket.socket, limit: int = 64) -> None:
    for _ in range(limit):
        try:
            sock.recv(65535)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            return
