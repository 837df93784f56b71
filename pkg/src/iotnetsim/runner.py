"""Build a network from a scenario, run it and write the run directory."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .lora import GatewayTiming, LoraNetwork, max_rolling_airtime
from .metrics import ConsistencyError, MetricsWindow, ceiling, delivered, summary_markdown, windows_csv
from .scenario import Scenario
from .wpan import CsmaParams, HostInterface, WpanNetwork, WpanTraffic

MANIFEST = "manifest.json"


@dataclass
class RunResult:
    scenario: Scenario
    windows: list[MetricsWindow]
    network: object
    counters: dict[str, dict] = field(default_factory=dict)

    @property
    def technology(self) -> str:
        return self.scenario.technology

    def csv(self) -> str:
        return windows_csv(self.windows, self.technology, self.scenario.max_packets())

    def summary(self) -> str:
        return summary_markdown(self.windows, self.technology, self.scenario.max_packets(),
                                self.scenario.name or self.technology)


def build(s: Scenario, *, trace: bool = False):
    link, channel = s.link_model(), s.channel_model()
    nodes = [
        {"id": n.id, "occupancy": n.occupancy, "boot_time": n.boot_time,
         "sensor_latency": n.sensor_latency}
        for n in s.topology.nodes
    ]
    if s.technology == "lora":
        t = s.timing
        timing = GatewayTiming(gw_delay=t.gw_delay, sensor_latency=t.sensor_latency,
                               join_window=t.join_window, refresh_interval=t.refresh_interval,
                               pacing=t.pacing, max_retries=t.max_retries)
        return LoraNetwork(s.radio_config(), link, channel, nodes, gateway=s.topology.gateway,
                           timing=timing, limit=s.limit(), seed=s.seed,
                           window=s.reporting.window, trace=trace)
    return WpanNetwork(link, channel, nodes, gateway=s.topology.gateway,
                       csma=CsmaParams(**s.csma), traffic=WpanTraffic(**s.traffic),
                       host=HostInterface(**s.host), seed=s.seed,
                       window=s.reporting.window, trace=trace)


def _check_duty(net: LoraNetwork) -> dict[str, float]:
    budget = net.limit.budget_per_hour
    peaks = {}
    for dev, ledger in net.ledgers().items():
        peak = max_rolling_airtime(ledger.history)
        if peak > budget + 1e-9:
            raise ConsistencyError(f"{dev} transmitted {peak:.6f} s in one hour (budget {budget} s)")
        peaks[dev] = peak
    return peaks


def run(s: Scenario, *, trace: bool = False) -> RunResult:
    net = build(s, trace=trace)
    windows = net.run(s.duration)
    cap = s.max_packets()
    for w in windows:
        if s.reporting.max_packets is not None:
            w.max_packets = None  # an explicit ceiling overrides the per-window one
        limit = ceiling(w, cap)
        if delivered(w, s.technology) > limit + 1e-9:
            raise ConsistencyError(f"{w.node}@{w.window_start}: delivered more than {limit:g}")
    counters: dict[str, dict] = {}
    if s.technology == "lora":
        peaks = _check_duty(net)
        for node_id, node in net.nodes.items():
            counters[node_id] = {"dps_sent": node.dps_sent, "duty_skips": node.duty_skips,
                                 "max_hour_airtime_s": round(peaks[node_id], 6)}
        counters[net.gateway.id] = {"max_hour_airtime_s": round(peaks[net.gateway.id], 6),
                                    "registry": list(net.gateway.registry)}
        counters["_medium"] = {"collisions": net.medium.collisions}
    else:
        for dev_id, dev in net.devices.items():
            c = dict(vars(dev.stats))
            c["parent"] = dev.tree.parent
            c["depth"] = dev.tree.depth
            counters[dev_id] = c
        counters["_medium"] = {"collisions": net.medium.collisions}
    return RunResult(s, windows, net, counters)


def write_run(result: RunResult, out_dir: str | Path) -> Path:
    """Write windows.csv, summary.md, counters.jsonl and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = result.scenario
    (out / "windows.csv").write_text(result.csv())
    (out / "summary.md").write_text(result.summary())
    with open(out / "counters.jsonl", "w") as fh:
        for dev in sorted(result.counters):
            fh.write(json.dumps({"device": dev, **result.counters[dev]}, sort_keys=True) + "\n")
    totals = {
        "windows": len(result.windows),
        "drps_sent": sum(w.drps_sent for w in result.windows),
        "dps_ok": sum(w.dps_ok for w in result.windows),
        "dps_crc_err": sum(w.dps_crc_err for w in result.windows),
        "drp_repeats": sum(w.drp_repeats for w in result.windows),
        "edp_delivered": sum(w.edp_delivered for w in result.windows),
        "pdp_delivered": sum(w.pdp_delivered for w in result.windows),
    }
    manifest = {
        "schema_version": s.schema_version,
        "name": s.name,
        "technology": s.technology,
        "seed": s.seed,
        "duration": s.duration,
        "window": s.reporting.window,
        "max_packets": s.max_packets(),
        "scenario_sha256": s.digest(),
        "totals": totals,
        "scenario": s.to_dict(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
