"""Gateway-coordinated LoRa star network.

The gateway announces itself every refresh period, admits nodes that answer
the announcement (randomised ALOHA replies) and then polls the registry in
join order: one Data Request Packet (DRP) per node, repeated up to three
more times when the Data Packet (DP) is missing or fails the application
CRC. Every transmitting device keeps a rolling one-hour airtime ledger and
never exceeds its budget.
"""

from __future__ import annotations

import binascii
import bisect
import math
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Literal

from .airtime import (
    EU868,
    RadioConfig,
    RegulatoryLimit,
    min_tx_period,
    packets_per_window,
    poll_slot_duration,
    time_on_air,
)
from .metrics import MetricsWindow
from .simcore import (
    ChannelModel,
    Engine,
    LinkModel,
    Medium,
    ReceptionOutcome,
    RngStreams,
    SimulationError,
    Transmission,
)

BAND = "lora868"
MAX_DP_LEN = 60
DRP_LEN = 4
HOUR = 3600.0


def crc16(payload: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF)."""
    return binascii.crc_hqx(payload, 0xFFFF)


@dataclass(frozen=True)
class Frame:
    kind: Literal["Beacon", "JoinReq", "JoinAck", "DRP", "DP"]
    src: str
    dst: str | None
    seq: int
    payload: bytes
    app_crc: int
    pir_flag: bool = False

    @classmethod
    def build(cls, kind, src, dst, seq, payload: bytes, pir_flag: bool = False) -> "Frame":
        if kind == "DP" and len(payload) > MAX_DP_LEN:
            raise ValueError(f"DP payload is limited to {MAX_DP_LEN} bytes")
        if kind == "DRP" and len(payload) != DRP_LEN:
            raise ValueError(f"DRP payload is fixed at {DRP_LEN} bytes")
        return cls(kind, src, dst, seq, payload, crc16(payload), pir_flag)

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def verify(self) -> bool:
        return crc16(self.payload) == self.app_crc

    def corrupted(self) -> "Frame":
        """Copy with one payload bit flipped (or the checksum, for empty payloads)."""
        if not self.payload:
            return replace(self, app_crc=self.app_crc ^ 0x0001)
        data = bytearray(self.payload)
        bit = self.seq % (8 * len(data))
        data[bit // 8] ^= 1 << (bit % 8)
        return replace(self, payload=bytes(data))


def _fill(header: bytes, length: int) -> bytes:
    """Pad a frame header with a deterministic byte pattern up to ``length``."""
    body = header[:length]
    return body + bytes((i * 37 + 11) & 0xFF for i in range(length - len(body)))


class DutyCycleLedger:
    """Airtime accounting over a trailing hour.

    Admission is conservative: every frame that ends inside the trailing hour
    counts in full, so an admitted frame can never push any one-hour window
    over budget.
    """

    def __init__(self, limit: RegulatoryLimit = EU868, horizon: float = HOUR):
        self.limit = limit
        self.horizon = horizon
        self.budget = limit.duty_cycle * horizon
        self._active: deque[tuple[float, float]] = deque()
        self._sum = 0.0
        self.history: list[tuple[float, float]] = []

    def _expire(self, t: float) -> None:
        while self._active and self._active[0][0] + self._active[0][1] <= t - self.horizon:
            _, d = self._active.popleft()
            self._sum -= d
        if not self._active:
            self._sum = 0.0

    def used(self, t: float) -> float:
        """Airtime counted against a frame ending at ``t``; may look ahead."""
        total = self._sum
        for start, d in self._active:
            if start + d > t - self.horizon:
                break
            total -= d
        return max(total, 0.0)

    def admits(self, t: float, duration: float) -> bool:
        return self.used(t + duration) + duration <= self.budget + 1e-9

    def next_admissible(self, t: float, duration: float) -> float:
        if duration > self.budget:
            raise SimulationError("frame longer than the whole hourly budget")
        if self.admits(t, duration):
            return t
        # The ledger only shrinks when an entry leaves the window.
        for start, d in list(self._active):
            cand = start + d + self.horizon - duration
            if cand > t and self.admits(cand, duration):
                return cand
        raise SimulationError("ledger never admits the frame")  # pragma: no cover

    def record(self, t: float, duration: float) -> None:
        if not self.admits(t, duration):
            raise SimulationError(f"duty-cycle budget exceeded at t={t:.6f}")
        if self.history and t < self.history[-1][0] + self.history[-1][1] - 1e-12:
            raise SimulationError("overlapping transmissions recorded in one ledger")
        self._expire(t)
        self._active.append((t, duration))
        self._sum += duration
        self.history.append((t, duration))


def max_rolling_airtime(entries: list[tuple[float, float]], horizon: float = HOUR) -> float:
    """Largest airtime inside any window of length ``horizon`` (exact).

    The maximum of the sliding-window integral is attained with a window edge
    on a frame edge, so only windows starting at a frame start or ending at a
    frame end are examined.
    """
    if not entries:
        return 0.0
    entries = sorted(entries)
    starts = [s for s, _ in entries]
    ends = [s + d for s, d in entries]
    prefix = [0.0]
    for _, d in entries:
        prefix.append(prefix[-1] + d)

    def load(a: float, b: float) -> float:
        i = bisect.bisect_right(ends, a)
        j = bisect.bisect_left(starts, b) - 1
        if j < i:
            return 0.0
        total = prefix[j + 1] - prefix[i]
        total -= max(0.0, a - starts[i])
        total -= max(0.0, ends[j] - b)
        return total

    best = 0.0
    for s, e in zip(starts, ends):
        best = max(best, load(s, s + horizon), load(e - horizon, e))
    return best


@dataclass
class GatewayTiming:
    gw_delay: float = 0.050
    sensor_latency: float = 0.037
    join_window: float = 60.0
    refresh_interval: float = 900.0
    pacing: Literal["fixed-gap", "ledger"] = "fixed-gap"
    max_retries: int = 3
    drp_len: int = DRP_LEN
    dp_len: int = MAX_DP_LEN
    beacon_len: int = 2
    join_len: int = 2
    timeout_margin: float = 0.010
    pir_interval: float = 2.0


class LoraNode:
    def __init__(self, net: "LoraNetwork", node_id: str, occupancy: float = 0.0,
                 boot_time: float = 0.0, sensor_latency: float | None = None):
        self.net = net
        self.id = node_id
        self.joined = False
        self.pir_pending = False
        self.occupancy = occupancy
        self.boot_time = boot_time
        self.sensor_latency = net.timing.sensor_latency if sensor_latency is None else sensor_latency
        self.ledger = DutyCycleLedger(net.limit)
        self.rng = net.rng.get("node", node_id)
        self.seq = 0
        self._pir_checked = boot_time
        self.duty_skips = 0
        self.dps_sent = 0
        self.next_allowed = -math.inf

    def powered(self, t: float) -> bool:
        return t >= self.boot_time

    # -- PIR ---------------------------------------------------------------
    def sample_pir(self, t: float) -> None:
        """Draw every PIR sample taken since the last check (one per interval)."""
        iv = self.net.timing.pir_interval
        k = math.floor((t - self.boot_time) / iv) - math.floor((self._pir_checked - self.boot_time) / iv)
        self._pir_checked = t
        if k > 0 and self.occupancy > 0:
            if (self.rng.random(k) < self.occupancy).any():
                self.pir_pending = True

    # -- frame handling ------------------------------------------------------
    def handle_drp(self, drp: Frame, t: float) -> Frame | None:
        """Build the DP answering ``drp``; ``None`` if the DRP is unusable."""
        if drp.kind != "DRP" or drp.dst != self.id or not drp.verify():
            return None
        self.joined = True  # a poll implies the gateway has us registered
        self.sample_pir(t)
        flag = self.pir_pending
        self.pir_pending = False
        self.seq += 1
        header = struct.pack(">HI?", drp.seq & 0xFFFF, self.seq, flag)
        return Frame.build("DP", self.id, drp.src, self.seq,
                           _fill(header, self.net.timing.dp_len), pir_flag=flag)

    def on_receive(self, tx: Transmission, outcome: ReceptionOutcome) -> None:
        now = self.net.engine.now()
        if not self.powered(tx.start) or outcome.kind == "lost":
            return
        frame: Frame = tx.frame
        if outcome.kind == "corrupted":
            frame = frame.corrupted()
        if not frame.verify():
            return
        if frame.kind == "Beacon" and not self.joined:
            w = self.net.timing.join_window
            delay = w * (1.0 - self.rng.random())  # (0, w]
            self.net.engine.after(delay, self._send_join, frame.src)
        elif frame.kind == "JoinAck" and frame.dst == self.id:
            self.joined = True
        elif frame.kind == "DRP" and frame.dst == self.id:
            dp = self.handle_drp(frame, now)
            if dp is not None:
                self.net.engine.after(self.sensor_latency, self._send, dp)

    def _send_join(self, gw: str) -> None:
        if self.joined:
            return
        self.seq += 1
        payload = _fill(self.id.encode(), self.net.timing.join_len)
        self._send(Frame.build("JoinReq", self.id, gw, self.seq, payload))

    def _send(self, frame: Frame) -> None:
        now = self.net.engine.now()
        toa = self.net.toa(frame.payload_len)
        if (self.net.medium.transmitting(self.id, now, now + toa) or not self.ledger.admits(now, toa)
                or now < self.next_allowed - 1e-12):
            self.duty_skips += 1
            if frame.pir_flag:
                self.pir_pending = True  # report the motion with the next reply
            return
        self.ledger.record(now, toa)
        if self.net.timing.pacing == "fixed-gap":
            self.next_allowed = now + min_tx_period(toa, self.net.limit)
        if frame.kind == "DP":
            self.dps_sent += 1
        self.net.transmit(self.id, frame, toa)


class Gateway:
    """Polling state machine of the PAN coordinator."""

    def __init__(self, net: "LoraNetwork", gw_id: str):
        self.net = net
        self.id = gw_id
        t = net.timing
        self.registry: list[str] = []
        self.poll_index = 0
        self.retry_count = 0
        self.ledger = DutyCycleLedger(net.limit)
        self.refresh_timer = 0.0
        self.round_end = 0.0
        self.seq = 0
        self.pending_acks: deque[str] = deque()
        self.radio_free_at = 0.0
        self.last_drp_start = -math.inf
        self.awaiting: tuple[str, int, float] | None = None  # node, window index, drp start
        self._timeout_ev = None
        self._next_drp_ev = None
        self.polling = False
        self.drp_toa = net.toa(t.drp_len)
        self.dp_toa = net.toa(t.dp_len)
        self.ack_toa = net.toa(t.join_len)
        self.beacon_toa = net.toa(t.beacon_len)
        self.timeout = self.drp_toa + t.sensor_latency + self.dp_toa + t.timeout_margin
        self.slot = poll_slot_duration(net.radio, t.gw_delay, t.sensor_latency,
                                       drp_len=t.drp_len, dp_len=t.dp_len, limit=net.limit)
        self.drps_per_node: dict[str, list[int]] = {}

    # -- refresh / join ----------------------------------------------------
    def start(self) -> None:
        self.net.engine.schedule(0.0, self.network_refresh)

    def network_refresh(self) -> None:
        eng = self.net.engine
        now = eng.now()
        t = self.net.timing
        self.round_end = now + t.refresh_interval
        self.refresh_timer = self.round_end
        eng.schedule(self.round_end, self.network_refresh)
        if self._next_drp_ev is not None:
            self._next_drp_ev.cancel()
            self._next_drp_ev = None
        self.polling = False  # no new polls until the beacon is out
        start = max(now, self.radio_free_at)
        if self.awaiting is not None:
            start = max(start, self.awaiting[2] + self.timeout)
        start = self.ledger.next_admissible(start, self.beacon_toa)
        eng.schedule(start, self._send_beacon)

    def _send_beacon(self) -> None:
        t = self.net.timing
        now = self.net.engine.now()
        if now < self.radio_free_at or self.awaiting is not None or not self.ledger.admits(now, self.beacon_toa):
            later = self.ledger.next_admissible(max(now, self.radio_free_at), self.beacon_toa)
            if self.awaiting is not None:
                later = max(later, self.awaiting[2] + self.timeout)
            self.net.engine.schedule(max(later, now + 1e-6), self._send_beacon)
            return
        self.seq += 1
        frame = Frame.build("Beacon", self.id, None, self.seq, _fill(self.id.encode(), t.beacon_len))
        self._gw_transmit(frame, self.beacon_toa)
        self.polling = True
        if not self.registry:
            # network creation: listen exclusively for the whole join window,
            # leaving room to answer a JoinReq sent at its very end
            resume = now + self.beacon_toa + t.join_window + 2 * (self.ack_toa + t.gw_delay)
            self.net.engine.schedule(resume, self._schedule_next_drp, resume)
        else:
            self._schedule_next_drp(now + self.beacon_toa + t.gw_delay)

    def _gw_transmit(self, frame: Frame, toa: float) -> None:
        now = self.net.engine.now()
        self.ledger.record(now, toa)
        self.radio_free_at = now + toa
        self.net.transmit(self.id, frame, toa)

    def _on_join_request(self, node: str) -> None:
        if node not in self.registry:
            self.registry.append(node)
        if node not in self.pending_acks:
            self.pending_acks.append(node)
        if self.awaiting is None:
            self._service_acks(self.net.engine.now())

    def _service_acks(self, now: float) -> None:
        """Send queued JoinAcks that fit before the next scheduled DRP."""
        if not self.pending_acks:
            return
        t = self.net.timing
        start = max(now + t.gw_delay, self.radio_free_at)
        limit = self._next_drp_ev.fire_time if self._next_drp_ev is not None else math.inf
        if start + self.ack_toa > limit or not self.ledger.admits(start, self.ack_toa):
            return
        self.net.engine.schedule(start, self._send_ack)

    def _send_ack(self) -> None:
        now = self.net.engine.now()
        if not self.pending_acks or self.awaiting is not None or now < self.radio_free_at:
            return
        limit = self._next_drp_ev.fire_time if self._next_drp_ev is not None else math.inf
        if now + self.ack_toa > limit or not self.ledger.admits(now, self.ack_toa):
            return
        node = self.pending_acks.popleft()
        self.seq += 1
        frame = Frame.build("JoinAck", self.id, node, self.seq,
                            _fill(node.encode(), self.net.timing.join_len))
        self._gw_transmit(frame, self.ack_toa)
        self._service_acks(now + self.ack_toa)

    # -- polling -------------------------------------------------------------
    def _schedule_next_drp(self, earliest: float) -> None:
        if self._next_drp_ev is not None:
            self._next_drp_ev.cancel()
            self._next_drp_ev = None
        if not self.registry or not self.polling:
            return
        t = self.net.timing
        n = len(self.registry)
        self.poll_index %= n
        when = max(earliest, self.radio_free_at)
        if t.pacing == "fixed-gap":
            when = max(when, self.last_drp_start + self.slot)
            step = self.slot
        else:
            step = self.timeout + t.gw_delay
        when = self.ledger.next_admissible(when, self.drp_toa)
        need = step * ((n - self.poll_index) if self.retry_count == 0 else 1)
        if when + need > self.round_end + 1e-9:
            self.polling = False  # resume after the next refresh
            return
        self._next_drp_ev = self.net.engine.schedule(when, self._send_drp)

    def _send_drp(self) -> None:
        self._next_drp_ev = None
        eng = self.net.engine
        now = eng.now()
        if now < self.radio_free_at or not self.ledger.admits(now, self.drp_toa):
            # a JoinAck sent since scheduling may have used the airtime
            self._schedule_next_drp(now)
            return
        node = self.registry[self.poll_index]
        self.seq += 1
        payload = struct.pack(">HH", self.seq & 0xFFFF, self.registry.index(node))
        frame = Frame.build("DRP", self.id, node, self.seq, payload)
        self._gw_transmit(frame, self.drp_toa)
        self.last_drp_start = now
        self.net.note_polled(now, len(self.registry))
        w = self.net.counter(node, now)
        w.drps_sent += 1
        if self.retry_count > 0:
            w.drp_repeats += 1
        self.drps_per_node.setdefault(node, []).append(self.retry_count)
        self.awaiting = (node, int(now // self.net.window), now)
        self._timeout_ev = eng.schedule(now + self.timeout, self._on_timeout)

    def _on_timeout(self) -> None:
        self._timeout_ev = None
        self._finish_exchange(success=False)

    def _finish_exchange(self, success: bool) -> None:
        now = self.net.engine.now()
        self.awaiting = None
        if self._timeout_ev is not None:
            self._timeout_ev.cancel()
            self._timeout_ev = None
        if success or self.retry_count >= self.net.timing.max_retries:
            self.retry_count = 0
            self.poll_index = (self.poll_index + 1) % len(self.registry)
        else:
            self.retry_count += 1
        self.exchange_end = now
        self._schedule_next_drp(now + self.net.timing.gw_delay)
        self._service_acks(now)

    def on_receive(self, tx: Transmission, outcome: ReceptionOutcome) -> None:
        if outcome.kind == "lost":
            return
        frame: Frame = tx.frame
        if self.awaiting is not None and frame.kind == "DP" and frame.src == self.awaiting[0]:
            node, widx, drp_start = self.awaiting
            w = self.net.counter(node, drp_start)
            w.rssi_samples.append(round(outcome.rssi, 6))
            if outcome.kind == "ok" and frame.verify():
                w.dps_ok += 1
                self._finish_exchange(success=True)
            else:
                w.dps_crc_err += 1
                self._finish_exchange(success=False)
            return
        if outcome.kind != "ok" or not frame.verify():
            return
        if frame.kind == "JoinReq" and frame.dst == self.id:
            self._on_join_request(frame.src)


class LoraNetwork:
    """One LoRa PAN (gateway plus nodes) wired to an engine and medium."""

    def __init__(
        self,
        radio: RadioConfig,
        link: LinkModel,
        channel: ChannelModel,
        nodes: list[dict],
        *,
        gateway: str = "gw",
        timing: GatewayTiming | None = None,
        limit: RegulatoryLimit = EU868,
        seed: int = 0,
        window: float = 900.0,
        engine: Engine | None = None,
        trace: bool = False,
    ):
        self.radio = radio
        self.timing = timing or GatewayTiming()
        self.limit = limit
        self.window = window
        self.engine = engine or Engine(trace=trace)
        self.rng = RngStreams(seed)
        self.channel_key = (BAND, 0, radio.sf)
        self.medium = Medium(self.engine, link, channel, self.rng,
                             stream_key=lambda tx, rx: ("rx", tx.sender, rx, tx.frame.kind))
        self._toa_cache: dict[int, float] = {}
        self.counters: dict[tuple[str, int], MetricsWindow] = {}
        self.polled_min: dict[int, int] = {}  # window index -> fewest registered nodes seen polling
        self.gateway = Gateway(self, gateway)
        self.medium.attach(gateway, self.gateway.on_receive)
        self.nodes: dict[str, LoraNode] = {}
        for spec in nodes:
            node = LoraNode(self, spec["id"], occupancy=spec.get("occupancy", 0.0),
                            boot_time=spec.get("boot_time", 0.0),
                            sensor_latency=spec.get("sensor_latency"))
            self.nodes[node.id] = node
            self.medium.attach(node.id, node.on_receive)

    def toa(self, payload_len: int) -> float:
        v = self._toa_cache.get(payload_len)
        if v is None:
            v = self._toa_cache[payload_len] = time_on_air(self.radio, payload_len).total
        return v

    def transmit(self, sender: str, frame: Frame, toa: float) -> None:
        receivers = None if frame.dst is None else (frame.dst,)
        tx = Transmission(sender, self.engine.now(), toa, self.channel_key, frame, receivers=receivers)
        self.medium.transmit(tx)

    def counter(self, node: str, t: float) -> MetricsWindow:
        idx = int(t // self.window)
        key = (node, idx)
        w = self.counters.get(key)
        if w is None:
            w = self.counters[key] = MetricsWindow(node, idx * self.window, self.window)
        return w

    def note_polled(self, t: float, registered: int) -> None:
        idx = int(t // self.window)
        self.polled_min[idx] = min(self.polled_min.get(idx, registered), registered)

    def window_ceiling(self, registered: int) -> int:
        """Most DPs one node can deliver in a window with ``registered`` nodes polled.

        A node succeeds at most once per polling round, and whole rounds only
        start when they fit before the next refresh. Its own duty cycle also
        keeps successive replies a minimum period apart. Under ledger pacing
        only the hourly airtime budget limits a node.
        """
        dp_toa = self.toa(self.timing.dp_len)
        if self.timing.pacing == "ledger":
            # bursts are allowed, so only the hourly airtime budget binds
            per_hour = math.floor(self.limit.budget_per_hour / dp_toa + 1e-9)
            return per_hour * math.ceil(self.window / HOUR - 1e-9)
        rounds = packets_per_window(registered, self.gateway.slot, self.window)
        if self.timing.refresh_interval != self.window:
            rounds += 1  # a round may straddle the window edge
        by_duty = math.floor(self.window / min_tx_period(dp_toa, self.limit) + 1e-9) + 1
        return min(rounds, by_duty)

    def ledgers(self) -> dict[str, DutyCycleLedger]:
        out = {self.gateway.id: self.gateway.ledger}
        out.update({n.id: n.ledger for n in self.nodes.values()})
        return out

    def run(self, duration: float) -> list[MetricsWindow]:
        self.gateway.start()
        self.engine.run_until(duration)
        return self.windows(duration)

    def windows(self, duration: float) -> list[MetricsWindow]:
        """Complete windows only, every node present in each (zero-filled)."""
        n_windows = int(duration // self.window + 1e-9)
        out = []
        for idx in range(n_windows):
            for node in self.nodes:
                w = self.counters.get((node, idx)) or MetricsWindow(node, idx * self.window, self.window)
                if idx in self.polled_min:
                    w.max_packets = self.window_ceiling(self.polled_min[idx])
                w.check()
                out.append(w)
        return out
