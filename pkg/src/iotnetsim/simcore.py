"""Discrete-event engine and the shared radio medium.

The engine orders events by ``(fire_time, sequence)``; the sequence is a
plain insertion counter so ties always resolve in scheduling order. Every
random draw comes from a named PCG64 stream derived from the run seed, so a
scenario and seed reproduce the same trace on any platform.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Literal

import numpy as np


class SimulationError(RuntimeError):
    """Raised when the engine or a protocol reaches an inconsistent state."""


# ---------------------------------------------------------------------------
# Event engine


@dataclass(order=True)
class Event:
    fire_time: float
    sequence: int
    action: Callable[..., Any] = field(compare=False)
    args: tuple = field(default=(), compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class Engine:
    def __init__(self, trace: bool = False):
        self._queue: list[Event] = []
        self._seq = 0
        self._now = 0.0
        self.trace: list[tuple[float, int, str]] | None = [] if trace else None

    def now(self) -> float:
        return self._now

    def schedule(self, fire_time: float, action: Callable[..., Any], *args) -> Event:
        if fire_time < self._now:
            raise SimulationError(
                f"cannot schedule into the past ({fire_time!r} < now {self._now!r})"
            )
        ev = Event(fire_time, self._seq, action, args)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay: float, action: Callable[..., Any], *args) -> Event:
        return self.schedule(self._now + delay, action, *args)

    def run_until(self, t_end: float) -> None:
        q = self._queue
        while q and q[0].fire_time <= t_end:
            ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self._now = ev.fire_time
            if self.trace is not None:
                self.trace.append((ev.fire_time, ev.sequence, _label(ev.action)))
            ev.action(*ev.args)
        if t_end > self._now:
            self._now = t_end

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)


def _label(action) -> str:
    return getattr(action, "__qualname__", type(action).__name__)


# ---------------------------------------------------------------------------
# Random streams


def _key_word(part: Hashable) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(repr(part).encode())


class RngStreams:
    """Lazily created, independent generators keyed by arbitrary tuples.

    Keys are hashed with CRC32 (stable across interpreters, unlike ``hash``)
    into a SeedSequence spawn key.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[tuple, np.random.Generator] = {}

    def get(self, *key: Hashable) -> np.random.Generator:
        gen = self._streams.get(key)
        if gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_word(k) for k in key))
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[key] = gen
        return gen


# ---------------------------------------------------------------------------
# Links and channel


@dataclass
class LinkModel:
    """Base RSSI between ordered device pairs plus Gaussian per-reception jitter.

    ``matrix`` maps ``(src, dst)`` to a mean RSSI in dBm (explicit mode).
    In path-loss mode the mean is derived from ``positions`` (x, y, floor in
    metres/floor index), ``tx_power`` and the log-distance parameters; walls
    are straight segments ``((x1, y1), (x2, y2))`` on the floor plan.
    """

    mode: Literal["explicit", "path-loss"] = "explicit"
    matrix: dict[tuple[str, str], float] = field(default_factory=dict)
    jitter_sd: float = 0.0
    jitter_overrides: dict[tuple[str, str], float] = field(default_factory=dict)
    positions: dict[str, tuple[float, float, int]] = field(default_factory=dict)
    tx_power: dict[str, float] = field(default_factory=dict)
    default_tx_power: float = 14.0
    pl0: float = 40.0
    d0: float = 1.0
    gamma: float = 3.0
    wall_loss: float = 5.0
    floor_loss: float = 15.0
    walls: list[tuple[tuple[float, float], tuple[float, float]]] = field(default_factory=list)

    def __post_init__(self):
        if self.jitter_sd < 0 or any(v < 0 for v in self.jitter_overrides.values()):
            raise ValueError("jitter_sd must be >= 0")
        if self.mode not in ("explicit", "path-loss"):
            raise ValueError(f"unknown link mode {self.mode!r}")
        self._cache: dict[tuple[str, str], float] = {}

    def mean_rssi(self, src: str, dst: str) -> float:
        key = (src, dst)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if self.mode == "explicit":
            try:
                value = float(self.matrix[key])
            except KeyError:
                raise KeyError(f"no RSSI entry for link {src}->{dst}") from None
        else:
            value = self._path_loss_rssi(src, dst)
        self._cache[key] = value
        return value

    def _path_loss_rssi(self, src: str, dst: str) -> float:
        (x1, y1, f1), (x2, y2, f2) = self.positions[src], self.positions[dst]
        d = max(math.hypot(x2 - x1, y2 - y1), self.d0)
        n_walls = sum(
            1 for w in self.walls if _segments_cross((x1, y1), (x2, y2), w[0], w[1])
        )
        loss = (
            self.pl0
            + 10 * self.gamma * math.log10(d / self.d0)
            + n_walls * self.wall_loss
            + abs(f2 - f1) * self.floor_loss
        )
        return self.tx_power.get(src, self.default_tx_power) - loss

    def jitter_for(self, src: str, dst: str) -> float:
        return self.jitter_overrides.get((src, dst), self.jitter_sd)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def link_rssi(src: str, dst: str, model: LinkModel, rng: np.random.Generator) -> float:
    """One RSSI sample for a reception on ``src -> dst``.

    A normal variate is always drawn, even with zero jitter, so the stream
    position does not depend on the link configuration.
    """
    z = rng.standard_normal()
    return model.mean_rssi(src, dst) + model.jitter_for(src, dst) * z


ChannelKey = tuple  # (band, channel, spreading factor or None)

# SX1276 sensitivities at 125 kHz; each doubling of bandwidth costs 3 dB.
_LORA_SENS_125K = {6: -118.0, 7: -123.0, 8: -126.0, 9: -129.0, 10: -132.0, 11: -134.5, 12: -137.0}


def default_lora_sensitivity(sf: int, bw: int) -> float:
    return _LORA_SENS_125K[sf] + 10 * math.log10(bw / 125_000)


@dataclass
class ChannelModel:
    """Reception thresholds and the corruption model shared by all links.

    ``p_corrupt`` is a piecewise-linear curve of ``(margin_db, probability)``
    points, clamped at both ends; margin is RSSI minus sensitivity.
    """

    sensitivity: dict[Hashable, float] = field(default_factory=dict)
    default_sensitivity: float | None = None
    capture_margin: float = 6.0
    p_corrupt: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 0.5), (20.0, 0.0)])

    def __post_init__(self):
        pts = sorted((float(m), float(p)) for m, p in self.p_corrupt)
        if not pts:
            raise ValueError("p_corrupt needs at least one point")
        if any(not 0 <= p <= 1 for _, p in pts):
            raise ValueError("p_corrupt probabilities must lie in [0, 1]")
        self.p_corrupt = pts
        self._xp = np.array([m for m, _ in pts])
        self._fp = np.array([p for _, p in pts])

    def sensitivity_for(self, key: ChannelKey) -> float:
        band, _, sf = key
        lookup = self.sensitivity.get((band, sf), self.sensitivity.get(band))
        if lookup is not None:
            return lookup
        if self.default_sensitivity is not None:
            return self.default_sensitivity
        raise KeyError(f"no sensitivity configured for channel {key}")

    def corruption_probability(self, margin: float) -> float:
        return float(np.interp(margin, self._xp, self._fp))


@dataclass
class Transmission:
    sender: str
    start: float
    duration: float
    channel_key: ChannelKey
    frame: Any
    tx_power: float = 0.0
    receivers: tuple[str, ...] | None = None  # None: every attached device

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("transmission duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def overlaps(self, other: "Transmission") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class ReceptionOutcome:
    kind: Literal["ok", "corrupted", "lost"]
    rssi: float


def resolve_reception(
    tx: Transmission,
    receiver: str,
    concurrent: Iterable[Transmission],
    link: LinkModel,
    channel: ChannelModel,
    rng: np.random.Generator,
) -> ReceptionOutcome:
    """Decide the fate of ``tx`` at ``receiver``.

    Exactly two variates are consumed per call (RSSI jitter, corruption draw).
    """
    if receiver == tx.sender:
        raise ValueError("a device does not receive its own transmission")
    rssi = link_rssi(tx.sender, receiver, link, rng)
    u = rng.random()
    sens = channel.sensitivity_for(tx.channel_key)
    if rssi < sens:
        return ReceptionOutcome("lost", rssi)
    for other in concurrent:
        if other is tx or other.sender == tx.sender or other.channel_key != tx.channel_key:
            continue
        if not other.overlaps(tx) or other.sender == receiver:
            continue
        if link.mean_rssi(other.sender, receiver) >= rssi - channel.capture_margin:
            return ReceptionOutcome("corrupted", rssi)
    if u < channel.corruption_probability(rssi - sens):
        return ReceptionOutcome("corrupted", rssi)
    return ReceptionOutcome("ok", rssi)


class Medium:
    """Shared air interface: tracks transmissions and hands out receptions.

    Devices attach with a callback ``on_receive(tx, outcome)``; a device
    that is itself transmitting at any point of a frame cannot receive it.
    ``stream_key(tx, receiver)`` picks the RNG stream for a reception, which
    lets protocols keep unrelated traffic classes on separate streams.
    """

    def __init__(
        self,
        engine: Engine,
        link: LinkModel,
        channel: ChannelModel,
        rng: RngStreams,
        stream_key: Callable[[Transmission, str], tuple] | None = None,
    ):
        self.engine = engine
        self.link = link
        self.channel = channel
        self.rng = rng
        self.stream_key = stream_key or (lambda tx, rx: ("rx", tx.sender, rx))
        self._listeners: dict[str, Callable[[Transmission, ReceptionOutcome], None]] = {}
        self._bands: dict[str, Any] = {}
        self.recent: list[Transmission] = []
        self._last_end: dict[str, float] = {}
        self._longest = 0.0
        self.log: list[tuple[float, str, str, str]] = []
        self.collisions = 0
        self.record_log = False

    def attach(self, device: str, on_receive, band=None) -> None:
        self._listeners[device] = on_receive
        self._bands[device] = band

    def transmit(self, tx: Transmission) -> None:
        if tx.start != self.engine.now():
            raise SimulationError("transmissions start at the current simulated time")
        if self._last_end.get(tx.sender, -math.inf) > tx.start + 1e-12:
            raise SimulationError(f"{tx.sender} started a frame while still transmitting")
        self._last_end[tx.sender] = tx.end
        self._longest = max(self._longest, tx.duration)
        self._prune()
        self.recent.append(tx)
        self.engine.schedule(tx.end, self._finish, tx)

    def busy_during(self, device: str, a: float, b: float, threshold: float,
                    channel_key: ChannelKey) -> bool:
        """Carrier sense at ``device`` over ``[a, b]``: any audible foreign frame."""
        for other in self.recent:
            if other.sender == device or other.channel_key != channel_key:
                continue
            if other.start <= b and a < other.end and self.link.mean_rssi(other.sender, device) >= threshold:
                return True
        return False

    def transmitting(self, device: str, start: float, end: float) -> bool:
        for other in self.recent:
            if other.sender == device and other.start < end and start < other.end:
                return True
        return False

    def _prune(self) -> None:
        # nothing that ended before the longest frame seen could still overlap
        horizon = self.engine.now() - 2 * self._longest
        if self.recent and self.recent[0].end < horizon:
            self.recent = [t for t in self.recent if t.end >= horizon]

    def _finish(self, tx: Transmission) -> None:
        receivers = tx.receivers if tx.receivers is not None else tuple(self._listeners)
        concurrent = [
            t for t in self.recent
            if t is not tx and t.channel_key == tx.channel_key and t.overlaps(tx)
        ]
        if any(t.sender != tx.sender for t in concurrent):
            self.collisions += 1
        for rx in receivers:
            if rx == tx.sender or rx not in self._listeners:
                continue
            if self._bands.get(rx) is not None and self._bands[rx] != tx.channel_key[0]:
                continue
            if self.transmitting(rx, tx.start, tx.end):
                continue
            rng = self.rng.get(*self.stream_key(tx, rx))
            outcome = resolve_reception(tx, rx, concurrent, self.link, self.channel, rng)
            if self.record_log:
                self.log.append((tx.end, tx.sender, rx, outcome.kind))
            self._listeners[rx](tx, outcome)
