"""Scenario documents: JSON in, validated dataclasses out, and back again.

A scenario fully describes one run: radio, gateway timing, topology with
per-link RSSI (or path-loss geometry), channel model and reporting window.
``to_dict(from_dict(d))`` is a fixed point for any document that validates.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

from .airtime import RadioConfig, RegulatoryLimit, packets_per_window, poll_slot_duration
from .simcore import ChannelModel, LinkModel, default_lora_sensitivity

SCHEMA_VERSION = 1
TECHNOLOGIES = ("lora", "wpan")
WPAN_DEFAULT_SENSITIVITY = -100.0


class ScenarioError(ValueError):
    """Invalid scenario document; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class NodeSpec:
    id: str
    occupancy: float = 0.0
    boot_time: float = 0.0
    position: list[float] | None = None  # [x, y, floor]
    tx_power: float | None = None
    sensor_latency: float | None = None


@dataclass
class LinkEntry:
    src: str
    dst: str
    rssi: float
    jitter_sd: float | None = None
    symmetric: bool = True


@dataclass
class Topology:
    gateway: str = "gw"
    gateway_position: list[float] | None = None
    nodes: list[NodeSpec] = field(default_factory=list)
    link_mode: str = "explicit"
    links: list[LinkEntry] = field(default_factory=list)
    pl0: float = 40.0
    d0: float = 1.0
    gamma: float = 3.0
    wall_loss: float = 5.0
    floor_loss: float = 15.0
    walls: list[list[list[float]]] = field(default_factory=list)
    tx_power: float = 14.0


@dataclass
class Channel:
    sensitivity: float | None = None
    capture_margin: float = 6.0
    p_corrupt: list[list[float]] = field(default_factory=lambda: [[0.0, 0.5], [20.0, 0.0]])
    jitter_sd: float = 0.0


@dataclass
class Timing:
    gw_delay: float = 0.050
    sensor_latency: float = 0.037
    join_window: float = 60.0
    refresh_interval: float = 900.0
    pacing: str = "fixed-gap"
    max_retries: int = 3


@dataclass
class Reporting:
    window: float = 900.0
    max_packets: float | None = None


@dataclass
class Scenario:
    technology: str
    name: str = ""
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    duration: float = 3600.0
    radio: dict[str, Any] = field(default_factory=dict)
    csma: dict[str, Any] = field(default_factory=dict)
    traffic: dict[str, Any] = field(default_factory=dict)
    host: dict[str, Any] = field(default_factory=dict)
    duty_cycle: float = 0.01
    timing: Timing = field(default_factory=Timing)
    topology: Topology = field(default_factory=Topology)
    channel: Channel = field(default_factory=Channel)
    reporting: Reporting = field(default_factory=Reporting)

    # -- derived objects -----------------------------------------------------
    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.topology.nodes]

    def radio_config(self) -> RadioConfig:
        return RadioConfig(**self.radio)

    def limit(self) -> RegulatoryLimit:
        return RegulatoryLimit(self.duty_cycle)

    def link_model(self) -> LinkModel:
        topo = self.topology
        overrides = {}
        if topo.link_mode == "explicit":
            matrix = {}
            for e in topo.links:
                pairs = [(e.src, e.dst), (e.dst, e.src)] if e.symmetric else [(e.src, e.dst)]
                for p in pairs:
                    matrix[p] = e.rssi
                    if e.jitter_sd is not None:
                        overrides[p] = e.jitter_sd
            return LinkModel(matrix=matrix, jitter_sd=self.channel.jitter_sd,
                             jitter_overrides=overrides)
        positions = {topo.gateway: tuple(topo.gateway_position)}
        powers = {}
        for n in topo.nodes:
            positions[n.id] = tuple(n.position)
            if n.tx_power is not None:
                powers[n.id] = n.tx_power
        return LinkModel(
            mode="path-loss", positions=positions, tx_power=powers,
            default_tx_power=topo.tx_power, pl0=topo.pl0, d0=topo.d0, gamma=topo.gamma,
            wall_loss=topo.wall_loss, floor_loss=topo.floor_loss,
            walls=[(tuple(a), tuple(b)) for a, b in topo.walls],
            jitter_sd=self.channel.jitter_sd,
        )

    def channel_model(self) -> ChannelModel:
        ch = self.channel
        if self.technology == "lora":
            cfg = self.radio_config()
            sens = ch.sensitivity if ch.sensitivity is not None else default_lora_sensitivity(cfg.sf, cfg.bw)
        else:
            sens = ch.sensitivity if ch.sensitivity is not None else WPAN_DEFAULT_SENSITIVITY
        return ChannelModel(default_sensitivity=sens, capture_margin=ch.capture_margin,
                            p_corrupt=[tuple(p) for p in ch.p_corrupt])

    def max_packets(self) -> float:
        """Per-node, per-window packet ceiling used as the NDR denominator."""
        if self.reporting.max_packets is not None:
            return self.reporting.max_packets
        if self.technology == "wpan":
            return self.reporting.window / float(self.traffic.get("edp_interval", 10.0))
        slot = poll_slot_duration(self.radio_config(), self.timing.gw_delay,
                                  self.timing.sensor_latency, limit=self.limit())
        return packets_per_window(len(self.topology.nodes), slot, self.reporting.window)

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, **changes) -> "Scenario":
        d = self.to_dict()
        d.update(changes)
        return from_dict(d)


# ---------------------------------------------------------------------------
# Parsing


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ScenarioError(where, "expected an object")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ScenarioError(f"{where}.{sorted(extra)[0]}" if where else sorted(extra)[0], "unknown field")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ScenarioError(where or cls.__name__, str(exc)) from None


def _number(value, where: str, *, lo=None, hi=None, allow_none=False, integer=False):
    if value is None and allow_none:
        return
    ok_type = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, ok_type):
        raise ScenarioError(where, f"expected a number, got {value!r}")
    if lo is not None and value < lo:
        raise ScenarioError(where, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ScenarioError(where, f"must be <= {hi}, got {value}")


def from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    data = copy.deepcopy(data)
    version = data.get("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
    if data.get("technology") not in TECHNOLOGIES:
        raise ScenarioError("technology", f"must be one of {TECHNOLOGIES}")
    sub = {"timing": Timing, "channel": Channel, "reporting": Reporting}
    for key, cls in sub.items():
        if key in data:
            data[key] = _build(cls, data[key], key)
    if "topology" in data:
        topo = dict(data["topology"]) if isinstance(data["topology"], dict) else data["topology"]
        if isinstance(topo, dict):
            topo["nodes"] = [_build(NodeSpec, n, f"topology.nodes[{i}]")
                             for i, n in enumerate(topo.get("nodes", []))]
            topo["links"] = [_build(LinkEntry, e, f"topology.links[{i}]")
                             for i, e in enumerate(topo.get("links", []))]
        data["topology"] = _build(Topology, topo, "topology")
    scen = _build(Scenario, data, "")
    validate(scen)
    return scen


def validate(s: Scenario) -> None:
    _number(s.seed, "seed", lo=0, integer=True)
    _number(s.duration, "duration", lo=0)
    _number(s.duty_cycle, "duty_cycle", lo=1e-9, hi=1)
    _number(s.reporting.window, "reporting.window", lo=1e-9)
    _number(s.reporting.max_packets, "reporting.max_packets", lo=1e-9, allow_none=True)
    t = s.timing
    for name in ("gw_delay", "sensor_latency", "join_window", "refresh_interval"):
        _number(getattr(t, name), f"timing.{name}", lo=0)
    if t.pacing not in ("fixed-gap", "ledger"):
        raise ScenarioError("timing.pacing", "must be 'fixed-gap' or 'ledger'")
    _number(t.max_retries, "timing.max_retries", lo=0, integer=True)

    if s.technology == "lora":
        if s.csma or s.traffic or s.host:
            bad = "csma" if s.csma else "traffic" if s.traffic else "host"
            raise ScenarioError(bad, "only valid for wpan scenarios")
        try:
            s.radio_config()
        except (TypeError, ValueError) as exc:
            raise ScenarioError("radio", str(exc)) from None
    else:
        if s.radio:
            raise ScenarioError("radio", "only valid for lora scenarios")
        from .wpan import CsmaParams, HostInterface, WpanTraffic
        for name, cls in (("csma", CsmaParams), ("traffic", WpanTraffic), ("host", HostInterface)):
            try:
                cls(**getattr(s, name))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(name, str(exc)) from None

    ch = s.channel
    _number(ch.sensitivity, "channel.sensitivity", allow_none=True)
    _number(ch.capture_margin, "channel.capture_margin")
    _number(ch.jitter_sd, "channel.jitter_sd", lo=0)
    if not ch.p_corrupt:
        raise ScenarioError("channel.p_corrupt", "needs at least one [margin, probability] point")
    for i, pt in enumerate(ch.p_corrupt):
        if not isinstance(pt, list) or len(pt) != 2:
            raise ScenarioError(f"channel.p_corrupt[{i}]", "expected [margin_db, probability]")
        _number(pt[0], f"channel.p_corrupt[{i}][0]")
        _number(pt[1], f"channel.p_corrupt[{i}][1]", lo=0, hi=1)

    topo = s.topology
    ids = [topo.gateway] + s.node_ids
    seen = set()
    for i, dev in enumerate(ids):
        where = "topology.gateway" if i == 0 else f"topology.nodes[{i - 1}].id"
        if not isinstance(dev, str) or not dev:
            raise ScenarioError(where, "device ids must be non-empty strings")
        if dev in seen:
            raise ScenarioError(where, f"duplicate device id {dev!r}")
        seen.add(dev)
    for i, n in enumerate(topo.nodes):
        _number(n.occupancy, f"topology.nodes[{i}].occupancy", lo=0, hi=1)
        _number(n.boot_time, f"topology.nodes[{i}].boot_time", lo=0)
        _number(n.sensor_latency, f"topology.nodes[{i}].sensor_latency", lo=0, allow_none=True)
        _number(n.tx_power, f"topology.nodes[{i}].tx_power", allow_none=True)
    if topo.link_mode == "explicit":
        covered = set()
        for i, e in enumerate(topo.links):
            for end in ("src", "dst"):
                if getattr(e, end) not in seen:
                    raise ScenarioError(f"topology.links[{i}].{end}", f"unknown device {getattr(e, end)!r}")
            if e.src == e.dst:
                raise ScenarioError(f"topology.links[{i}]", "self link")
            _number(e.rssi, f"topology.links[{i}].rssi")
            _number(e.jitter_sd, f"topology.links[{i}].jitter_sd", lo=0, allow_none=True)
            covered.add((e.src, e.dst))
            if e.symmetric:
                covered.add((e.dst, e.src))
        for a in ids:
            for b in ids:
                if a != b and (a, b) not in covered:
                    raise ScenarioError("topology.links", f"missing RSSI for link {a}->{b}")
    elif topo.link_mode == "path-loss":
        if not _is_point(topo.gateway_position):
            raise ScenarioError("topology.gateway_position", "expected [x, y, floor]")
        for i, n in enumerate(topo.nodes):
            if not _is_point(n.position):
                raise ScenarioError(f"topology.nodes[{i}].position", "expected [x, y, floor]")
        _number(topo.gamma, "topology.gamma", lo=0)
        _number(topo.d0, "topology.d0", lo=1e-9)
    else:
        raise ScenarioError("topology.link_mode", "must be 'explicit' or 'path-loss'")


def _is_point(p) -> bool:
    return isinstance(p, list) and len(p) == 3 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def load(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled preset by name (``lora_school_a_conf1``)."""
    p = Path(path)
    if not p.exists() and p.suffix in ("", ".json") and p.parent == Path("."):
        name = p.stem + ".json"
        preset = resources.files("iotnetsim") / "presets" / name
        if preset.is_file():
            return loads(preset.read_text())
    return loads(p.read_text())


def preset_names() -> list[str]:
    root = resources.files("iotnetsim") / "presets"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def perfect_channel(s: Scenario, *, occupancy: float | None = None) -> Scenario:
    """Same scenario with jitter and random corruption switched off."""
    d = s.to_dict()
    d["channel"]["jitter_sd"] = 0.0
    d["channel"]["p_corrupt"] = [[0.0, 0.0]]
    for e in d["topology"]["links"]:
        e["jitter_sd"] = None
    if occupancy is not None:
        for n in d["topology"]["nodes"]:
            n["occupancy"] = occupancy
    return from_dict(d)
