"""802.15.4-style multihop tree: RSSI-threshold joins, unslotted CSMA/CA with
per-hop ACK and retries, store-and-forward relaying towards the gateway.

Each environmental node reports an EDP every ``edp_interval`` and samples its
PIR sensor every ``pir_interval``, sending a PDP whenever motion is seen.
Optionally every device talks to its radio over a serial host interface; its
limited receive buffer is where bursts of traffic start to get dropped.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Literal

from .metrics import MetricsWindow
from .simcore import (
    ChannelModel,
    Engine,
    LinkModel,
    Medium,
    ReceptionOutcome,
    RngStreams,
    Transmission,
)

BAND = "ism2400"
MAX_PAYLOAD = 100


@dataclass
class CsmaParams:
    min_be: int = 3
    max_be: int = 5
    max_backoffs: int = 4
    backoff_unit: float = 320e-6
    cca_duration: float = 128e-6
    turnaround: float = 192e-6
    ack_timeout: float = 864e-6
    max_frame_retries: int = 3
    bit_rate: float = 250_000.0
    phy_overhead: int = 6
    cca_threshold: float | None = None  # defaults to the receiver sensitivity

    def __post_init__(self):
        if self.min_be > self.max_be:
            raise ValueError("min_be must not exceed max_be")
        if self.max_frame_retries < 0 or self.max_backoffs < 0:
            raise ValueError("retry and backoff limits must be >= 0")


def frame_airtime(payload_len: int, params: CsmaParams) -> float:
    return (params.phy_overhead + payload_len) * 8 / params.bit_rate


@dataclass(frozen=True)
class WpanFrame:
    kind: Literal["EDP", "PDP", "Ack", "Beacon", "JoinReq", "JoinAck"]
    origin: str
    hop_src: str
    hop_dst: str
    seq: int
    payload_len: int
    mac_seq: int = 0
    created: float = 0.0
    first_hop_rssi: float | None = None
    ack_of: str | None = None  # kind of the frame an Ack confirms

    def __post_init__(self):
        if not 0 <= self.payload_len <= MAX_PAYLOAD:
            raise ValueError(f"payload must fit one {MAX_PAYLOAD}-byte packet")

    @property
    def is_data(self) -> bool:
        return self.kind in ("EDP", "PDP")


@dataclass
class TreeState:
    parent: str | None = None
    children: set[str] = field(default_factory=set)
    depth: int | None = None


def tree_join(
    candidates: dict[str, tuple[float, int]],
    gateway: str,
    threshold: float = -90.0,
) -> tuple[str, int] | None:
    """Pick a parent from ``{device: (rssi_dbm, depth)}``.

    The gateway wins whenever its link clears the threshold; otherwise the
    shallowest qualifying node, strongest RSSI first. Returns
    ``(parent, own_depth)`` or ``None`` when nothing qualifies.
    """
    ok = {d: v for d, v in candidates.items() if v[0] >= threshold}
    if gateway in ok:
        return gateway, 1
    if not ok:
        return None
    best = min(ok, key=lambda d: (ok[d][1], -ok[d][0], d))
    return best, ok[best][1] + 1


@dataclass
class WpanTraffic:
    edp_interval: float = 10.0
    pir_interval: float = 2.0
    edp_len: int = 60
    pdp_len: int = 20
    join_len: int = 10
    ack_len: int = 5
    queue_depth: int = 4
    join_retry: float = 10.0
    rssi_threshold: float = -90.0


@dataclass
class HostInterface:
    """Serial link between a radio module and its microcontroller.

    Outgoing frames cross the link before reaching the MAC queue. At the
    gateway, every delivered frame waits in the radio's receive buffer until
    it has been sent over the link and handled by the host
    (``process_time``); frames that do not fit the buffer are lost.
    Relaying happens inside the radio and never touches the host.
    ``baud=None`` with zero ``process_time`` makes the host invisible.
    """

    baud: float | None = None
    api_overhead: int = 15
    rx_buffer: int = 202
    process_time: float = 0.0

    def __post_init__(self):
        if self.baud is not None and self.baud <= 0:
            raise ValueError("baud must be positive")
        if self.rx_buffer <= 0 or self.api_overhead < 0 or self.process_time < 0:
            raise ValueError("host buffer, overhead and process time must be non-negative")

    def transfer_time(self, payload_len: int) -> float:
        if self.baud is None:
            return 0.0
        return (payload_len + self.api_overhead) * 10 / self.baud

    @property
    def instant(self) -> bool:
        return self.baud is None and self.process_time == 0


@dataclass
class NodeStats:
    edp_generated: int = 0
    pdp_generated: int = 0
    queue_drops: int = 0
    access_failures: int = 0
    retry_failures: int = 0
    rx_overflow: int = 0
    data_tx: int = 0
    acks_tx: int = 0


class WpanDevice:
    def __init__(self, net: "WpanNetwork", dev_id: str, *, is_gateway: bool = False,
                 occupancy: float = 0.0, boot_time: float = 0.0):
        self.net = net
        self.id = dev_id
        self.is_gateway = is_gateway
        self.occupancy = occupancy
        self.boot_time = boot_time
        self.tree = TreeState(depth=0) if is_gateway else TreeState()
        self.stats = NodeStats()
        self.queue: deque[WpanFrame] = deque()
        self.current: WpanFrame | None = None
        self.radio_busy_until = -math.inf
        self.mac_seq = 0
        self.app_seq: dict[str, int] = {}
        self.rng_mac = net.rng.get("mac", dev_id)
        self.rng_pir = net.rng.get("pir", dev_id)
        self.rng_join = net.rng.get("join", dev_id)
        self.seen: dict[str, deque] = {}
        self.pending_parent: str | None = None
        self._ack_ev = None
        self._nb = self._be = self._attempt = 0
        # host interface queues
        self._di_free_at = 0.0
        self._do_bytes = 0
        self._do_free_at = 0.0

    @property
    def joined(self) -> bool:
        return self.tree.depth is not None

    # -- joining -------------------------------------------------------------
    def start(self) -> None:
        if not self.is_gateway:
            self.net.engine.schedule(self.boot_time, self.discover)

    def discover(self) -> None:
        """Measure every joined device and ask the chosen parent to adopt us."""
        if self.joined:
            return
        net = self.net
        sens = net.channel.sensitivity_for(net.channel_key)
        cands = {}
        for dev in net.devices.values():
            if dev is self or not dev.joined:
                continue
            rssi = net.link.mean_rssi(dev.id, self.id) + \
                net.link.jitter_for(dev.id, self.id) * self.rng_join.standard_normal()
            if rssi >= sens:
                cands[dev.id] = (rssi, dev.tree.depth)
        choice = tree_join(cands, net.gateway_id, net.traffic.rssi_threshold)
        if choice is None:
            net.engine.after(net.traffic.join_retry, self.discover)
            return
        self.pending_parent = choice[0]
        self.enqueue(WpanFrame("JoinReq", self.id, self.id, choice[0],
                               self._next_seq("JoinReq"), net.traffic.join_len,
                               created=net.engine.now()))
        net.engine.after(net.traffic.join_retry, self._join_watchdog)

    def _join_watchdog(self) -> None:
        if not self.joined:
            self.pending_parent = None
            self.discover()

    def _on_join_ack(self, frame: WpanFrame) -> None:
        if self.joined or frame.hop_src != self.pending_parent:
            return
        parent = self.net.devices[frame.hop_src]
        self.tree.parent = parent.id
        self.tree.depth = parent.tree.depth + 1
        self.pending_parent = None
        self.net.on_joined(self)
        self._start_apps()

    def _adopt(self, child: str) -> None:
        self.tree.children.add(child)
        self.enqueue(WpanFrame("JoinAck", self.id, self.id, child, self._next_seq("JoinAck"),
                               self.net.traffic.join_len, created=self.net.engine.now()))

    # -- applications ------------------------------------------------------
    def _start_apps(self) -> None:
        now = self.net.engine.now()
        self._app_anchor = now
        self.emit_edp()
        if self.occupancy > 0:
            # the PIR loop runs on its own clock, not in lockstep with EDPs
            phase = self.rng_pir.uniform(0.0, self.net.traffic.pir_interval)
            self.net.engine.schedule(now + phase, self.pir_sample)

    def emit_edp(self) -> None:
        net = self.net
        self.stats.edp_generated += 1
        self._originate("EDP", net.traffic.edp_len)
        net.engine.after(net.traffic.edp_interval, self.emit_edp)

    def pir_sample(self) -> None:
        net = self.net
        if self.rng_pir.random() < self.occupancy:
            self.stats.pdp_generated += 1
            self._originate("PDP", net.traffic.pdp_len)
        net.engine.after(net.traffic.pir_interval, self.pir_sample)

    def _next_seq(self, kind: str) -> int:
        self.app_seq[kind] = self.app_seq.get(kind, 0) + 1
        return self.app_seq[kind]

    def _originate(self, kind: str, length: int) -> None:
        frame = WpanFrame(kind, self.id, self.id, self.tree.parent, self._next_seq(kind),
                          length, created=self.net.engine.now())
        self._host_to_radio(frame)

    def _host_to_radio(self, frame: WpanFrame) -> None:
        host = self.net.host
        if host.baud is None:
            self.enqueue(frame)
            return
        now = self.net.engine.now()
        done = max(now, self._di_free_at) + host.transfer_time(frame.payload_len)
        self._di_free_at = done
        self.net.engine.schedule(done, self.enqueue, frame)

    # -- MAC -----------------------------------------------------------------
    def enqueue(self, frame: WpanFrame) -> None:
        if frame.hop_dst is None:
            return
        self.queue.append(frame)
        while len(self.queue) > self.net.traffic.queue_depth:
            self.queue.popleft()
            self.stats.queue_drops += 1
        if self.current is None:
            self._next_frame()

    def _next_frame(self) -> None:
        if not self.queue:
            self.current = None
            return
        self.mac_seq = (self.mac_seq + 1) & 0xFF
        self.current = replace(self.queue.popleft(), mac_seq=self.mac_seq)
        self._attempt = 0
        self._begin_csma()

    def _begin_csma(self) -> None:
        self._nb = 0
        self._be = self.net.csma.min_be
        self._backoff()

    def _backoff(self) -> None:
        p = self.net.csma
        slots = int(self.rng_mac.integers(0, 2 ** self._be))
        self.net.engine.after(slots * p.backoff_unit + p.cca_duration, self._cca_done)

    def _cca_done(self) -> None:
        net, p = self.net, self.net.csma
        now = net.engine.now()
        busy = now < self.radio_busy_until or net.medium.busy_during(
            self.id, now - p.cca_duration, now, net.cca_threshold, net.channel_key)
        if busy:
            self._nb += 1
            self._be = min(self._be + 1, p.max_be)
            if self._nb > p.max_backoffs:
                self.stats.access_failures += 1
                self._finish(False)
            else:
                self._backoff()
            return
        net.engine.after(p.turnaround, self._tx_data)

    def _tx_data(self) -> None:
        net = self.net
        now = net.engine.now()
        if now < self.radio_busy_until:
            self._backoff()
            return
        frame = self.current
        dur = frame_airtime(frame.payload_len, net.csma)
        self.radio_busy_until = now + dur
        self.stats.data_tx += 1
        net.medium.transmit(Transmission(self.id, now, dur, net.channel_key, frame,
                                         receivers=(frame.hop_dst,)))
        self._ack_ev = net.engine.schedule(now + dur + net.csma.ack_timeout, self._ack_missing)

    def _ack_missing(self) -> None:
        self._ack_ev = None
        self._attempt += 1
        if self._attempt > self.net.csma.max_frame_retries:
            self.stats.retry_failures += 1
            self._finish(False)
        else:
            self._begin_csma()

    def _on_ack(self, ack: WpanFrame) -> None:
        if self._ack_ev is None or self.current is None or ack.seq != self.current.mac_seq:
            return
        self._ack_ev.cancel()
        self._ack_ev = None
        self._finish(True)

    def _finish(self, success: bool) -> None:
        frame = self.current
        self.net.on_hop_result(self, frame, success)
        self._next_frame()

    def _send_ack(self, frame: WpanFrame) -> None:
        net = self.net
        now = net.engine.now()
        dur = frame_airtime(net.traffic.ack_len, net.csma)
        if now < self.radio_busy_until or net.medium.transmitting(self.id, now, now + dur):
            return
        self.radio_busy_until = now + dur
        self.stats.acks_tx += 1
        ack = WpanFrame("Ack", frame.origin, self.id, frame.hop_src, frame.mac_seq,
                        net.traffic.ack_len, ack_of=frame.kind)
        net.medium.transmit(Transmission(self.id, now, dur, net.channel_key, ack,
                                         receivers=(frame.hop_src,)))

    # -- reception -----------------------------------------------------------
    def on_receive(self, tx: Transmission, outcome: ReceptionOutcome) -> None:
        if outcome.kind != "ok":
            return  # corrupted frames fail the checksum and are discarded
        frame: WpanFrame = tx.frame
        if frame.hop_dst != self.id:
            return
        if frame.kind == "Ack":
            self._on_ack(frame)
            return
        if not self.is_gateway and not self.joined and frame.kind != "JoinAck":
            return
        self.net.engine.after(self.net.csma.turnaround, self._send_ack, frame)
        key = (frame.kind, frame.origin, frame.seq)
        seen = self.seen.setdefault(frame.hop_src, deque(maxlen=32))
        if key in seen:
            return
        seen.append(key)
        if frame.kind == "JoinReq":
            if self.joined:
                self._adopt(frame.origin)
        elif frame.kind == "JoinAck":
            self._on_join_ack(frame)
        elif frame.is_data:
            if frame.hop_src == frame.origin:
                frame = replace(frame, first_hop_rssi=outcome.rssi)
            if self.is_gateway:
                self._radio_to_host(frame)
            else:
                self.forward_up(frame)

    def _radio_to_host(self, frame: WpanFrame) -> None:
        host = self.net.host
        if host.instant:
            self.net.on_delivered(frame)
            return
        size = frame.payload_len + host.api_overhead
        if self._do_bytes + size > host.rx_buffer:
            self.stats.rx_overflow += 1
            return
        self._do_bytes += size
        now = self.net.engine.now()
        done = max(now, self._do_free_at) + host.transfer_time(frame.payload_len) + host.process_time
        self._do_free_at = done
        self.net.engine.schedule(done, self._drained, frame, size)

    def _drained(self, frame: WpanFrame, size: int) -> None:
        self._do_bytes -= size
        self.net.on_delivered(frame)

    def forward_up(self, frame: WpanFrame) -> None:
        """Relay an intact data frame one hop closer to the gateway."""
        if self.tree.parent is None:
            return
        self.enqueue(replace(frame, hop_src=self.id, hop_dst=self.tree.parent, mac_seq=0))


def _stream_key(tx: Transmission, rx: str) -> tuple:
    # one stream per link and traffic class, so extra PDP traffic does not
    # shift the draws seen by EDPs of the same seed
    f = tx.frame
    return ("rx", tx.sender, rx, f.kind, f.ack_of, f.origin)


class WpanNetwork:
    def __init__(
        self,
        link: LinkModel,
        channel: ChannelModel,
        nodes: list[dict],
        *,
        gateway: str = "gw",
        csma: CsmaParams | None = None,
        traffic: WpanTraffic | None = None,
        host: HostInterface | None = None,
        seed: int = 0,
        window: float = 900.0,
        channel_no: int = 11,
        engine: Engine | None = None,
        trace: bool = False,
    ):
        self.link = link
        self.channel = channel
        self.csma = csma or CsmaParams()
        self.traffic = traffic or WpanTraffic()
        self.host = host or HostInterface()
        self.window = window
        self.engine = engine or Engine(trace=trace)
        self.rng = RngStreams(seed)
        self.channel_key = (BAND, channel_no, None)
        self.medium = Medium(self.engine, link, channel, self.rng,
                             stream_key=_stream_key)
        self.cca_threshold = (self.csma.cca_threshold if self.csma.cca_threshold is not None
                              else channel.sensitivity_for(self.channel_key))
        self.gateway_id = gateway
        self.devices: dict[str, WpanDevice] = {gateway: WpanDevice(self, gateway, is_gateway=True)}
        for spec in nodes:
            self.devices[spec["id"]] = WpanDevice(self, spec["id"], occupancy=spec.get("occupancy", 0.0),
                                                  boot_time=spec.get("boot_time", 0.0))
        for dev in self.devices.values():
            self.medium.attach(dev.id, dev.on_receive)
        self.counters: dict[tuple[str, int], MetricsWindow] = {}
        self.join_log: list[tuple[float, str, str, int]] = []
        self.hop_log: list[tuple[str, str, bool]] = []
        self.deliveries: list[tuple[float, WpanFrame]] = []
        self.record_hops = False

    @property
    def nodes(self) -> list[str]:
        return [d for d in self.devices if d != self.gateway_id]

    def counter(self, node: str, t: float) -> MetricsWindow:
        idx = int(t // self.window)
        w = self.counters.get((node, idx))
        if w is None:
            w = self.counters[(node, idx)] = MetricsWindow(node, idx * self.window, self.window)
        return w

    def on_joined(self, dev: WpanDevice) -> None:
        self.join_log.append((self.engine.now(), dev.id, dev.tree.parent, dev.tree.depth))

    def on_hop_result(self, dev: WpanDevice, frame: WpanFrame, success: bool) -> None:
        if self.record_hops and frame.is_data:
            self.hop_log.append((dev.id, frame.origin, success))

    def on_delivered(self, frame: WpanFrame) -> None:
        now = self.engine.now()
        # credited to the window the packet was generated in
        w = self.counter(frame.origin, frame.created)
        if frame.kind == "EDP":
            w.edp_delivered += 1
        else:
            w.pdp_delivered += 1
        if frame.first_hop_rssi is not None:
            w.rssi_samples.append(round(frame.first_hop_rssi, 6))
        self.deliveries.append((now, frame))

    def tree(self) -> dict[str, TreeState]:
        return {d: dev.tree for d, dev in self.devices.items()}

    def run(self, duration: float) -> list[MetricsWindow]:
        for dev in self.devices.values():
            dev.start()
        self.engine.run_until(duration)
        return self.windows(duration)

    def windows(self, duration: float) -> list[MetricsWindow]:
        n_windows = int(duration // self.window + 1e-9)
        out = []
        for idx in range(n_windows):
            for node in self.nodes:
                w = self.counters.get((node, idx)) or MetricsWindow(node, idx * self.window, self.window)
                w.check()
                out.append(w)
        return out
