"""Per-window network-quality statistics and their CSV / markdown shapes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ConsistencyError(ValueError):
    """A counter record contradicts the scenario it came from."""


@dataclass
class MetricsWindow:
    node: str
    window_start: float
    window_length: float
    drps_sent: int = 0
    dps_ok: int = 0
    dps_crc_err: int = 0
    drp_repeats: int = 0
    edp_delivered: int = 0
    pdp_delivered: int = 0
    rssi_samples: list[float] = field(default_factory=list)
    max_packets: float | None = None  # this window's own ceiling, if the run knows it

    def check(self) -> None:
        counts = (self.drps_sent, self.dps_ok, self.dps_crc_err, self.drp_repeats,
                  self.edp_delivered, self.pdp_delivered)
        if min(counts) < 0:
            raise ConsistencyError(f"negative counter in window {self.window_start} for {self.node}")
        if self.dps_ok + self.dps_crc_err > self.drps_sent:
            raise ConsistencyError(
                f"{self.node}@{self.window_start}: {self.dps_ok} ok + {self.dps_crc_err} "
                f"corrupted replies exceed {self.drps_sent} requests"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsWindow":
        return cls(**d)


@dataclass(frozen=True)
class StatRow:
    avg: float
    sd: float
    min: float
    max: float


def pdr(w: MetricsWindow) -> float | None:
    """Delivered replies per request; ``None`` when nothing was requested."""
    if w.drps_sent == 0:
        return None
    return w.dps_ok / w.drps_sent


def crc_error_ratio(w: MetricsWindow) -> float | None:
    if w.drps_sent == 0:
        return None
    return w.dps_crc_err / w.drps_sent


def retx_ratio(w: MetricsWindow) -> float | None:
    if w.drps_sent == 0:
        return None
    return w.drp_repeats / w.drps_sent


def ndr(delivered: int, max_packets: float) -> float:
    if max_packets <= 0:
        raise ValueError("max_packets must be positive")
    if delivered > max_packets:
        raise ConsistencyError(
            f"{delivered} packets delivered but the window allows at most {max_packets}"
        )
    return delivered / max_packets


def packet_ratio_series(
    aggregated: Sequence[float],
    edp: Sequence[float] | None = None,
    pdp: Sequence[float] | None = None,
) -> dict[str, np.ndarray]:
    """Normalise per-window packet counts by the largest aggregated count."""
    agg = np.asarray(aggregated, dtype=float)
    if agg.size == 0:
        raise ValueError("empty series")
    peak = agg.max()
    scale = 1.0 / peak if peak > 0 else 0.0
    out = {"aggregated": agg * scale}
    if edp is not None:
        out["edp"] = np.asarray(edp, dtype=float) * scale
    if pdp is not None:
        out["pdp"] = np.asarray(pdp, dtype=float) * scale
    return out


def stat_rows(values: Iterable[float]) -> StatRow:
    """Mean, population SD, min and max."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("stat_rows needs at least one value")
    return StatRow(float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max()))


def rssi_stats(samples: Sequence[float]) -> tuple[float, float] | None:
    if not samples:
        return None
    arr = np.asarray(samples, dtype=float)
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------------------
# Tabular output

CSV_COLUMNS = (
    "window_start_s", "node_id", "drps_sent", "dps_ok", "dps_crc_err", "drp_repeats",
    "edp", "pdp", "pdr", "ndr", "crc_err_ratio", "retx_ratio", "rssi_avg", "rssi_sd",
)


def _fmt(value: float | None, digits: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.{digits}f}"


def delivered(w: MetricsWindow, technology: str) -> int:
    return w.dps_ok if technology == "lora" else w.edp_delivered


def ceiling(w: MetricsWindow, default: float) -> float:
    return default if w.max_packets is None else w.max_packets


def csv_row(w: MetricsWindow, technology: str, max_packets: float) -> dict[str, str]:
    rs = rssi_stats(w.rssi_samples)
    return {
        "window_start_s": f"{w.window_start:.6f}",
        "node_id": w.node,
        "drps_sent": str(w.drps_sent),
        "dps_ok": str(w.dps_ok),
        "dps_crc_err": str(w.dps_crc_err),
        "drp_repeats": str(w.drp_repeats),
        "edp": str(w.edp_delivered),
        "pdp": str(w.pdp_delivered),
        "pdr": _fmt(pdr(w), 6),
        "ndr": _fmt(ndr(delivered(w, technology), ceiling(w, max_packets)), 6),
        "crc_err_ratio": _fmt(crc_error_ratio(w), 6),
        "retx_ratio": _fmt(retx_ratio(w), 6),
        "rssi_avg": _fmt(rs[0] if rs else None, 2),
        "rssi_sd": _fmt(rs[1] if rs else None, 2),
    }


def windows_csv(windows: Sequence[MetricsWindow], technology: str, max_packets: float) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for w in windows:
        writer.writerow(csv_row(w, technology, max_packets))
    return buf.getvalue()


def per_node(windows: Iterable[MetricsWindow]) -> dict[str, list[MetricsWindow]]:
    out: dict[str, list[MetricsWindow]] = {}
    for w in windows:
        out.setdefault(w.node, []).append(w)
    return out


def markdown_table(title: str, columns: Sequence[str], rows: dict[str, Sequence[StatRow | None]],
                   digits: int = 2) -> str:
    """Avg/SD/Min/Max block per row label, one column per node."""
    lines = [f"### {title}", "", "| | | " + " | ".join(columns) + " |",
             "|---|---|" + "---|" * len(columns)]
    for label, stats in rows.items():
        for i, name in enumerate(("Avg.", "SD", "Min.", "Max.")):
            cells = []
            for s in stats:
                cells.append("" if s is None else f"{getattr(s, ('avg', 'sd', 'min', 'max')[i]):.{digits}f}")
            lines.append(f"| {label if i == 0 else ''} | {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def node_stat(windows: Sequence[MetricsWindow], fn) -> StatRow | None:
    vals = [v for v in (fn(w) for w in windows) if v is not None]
    return stat_rows(vals) if vals else None


def summary_markdown(
    windows: Sequence[MetricsWindow],
    technology: str,
    max_packets: float,
    label: str,
) -> str:
    groups = per_node(windows)
    nodes = sorted(groups)
    parts = [f"## {label}", ""]
    if technology == "lora":
        tables = {
            "Delivered DPs per window": lambda w: float(w.dps_ok),
            "Packet Delivery Ratio (PDR)": pdr,
            "CRC Error Ratio": crc_error_ratio,
            "Re-transmission Ratio": retx_ratio,
            "RSSI [dBm]": lambda w: rssi_stats(w.rssi_samples)[0] if w.rssi_samples else None,
        }
    else:
        tables = {
            "Delivered EDPs per window": lambda w: float(w.edp_delivered),
            "Delivered PDPs per window": lambda w: float(w.pdp_delivered),
            "RSSI [dBm]": lambda w: rssi_stats(w.rssi_samples)[0] if w.rssi_samples else None,
        }
    tables["Network Delivery Ratio (NDR)"] = lambda w: ndr(delivered(w, technology), ceiling(w, max_packets))
    for title, fn in tables.items():
        row = {label: [node_stat(groups[n], fn) for n in nodes]}
        parts.append(markdown_table(title, nodes, row))
    return "\n".join(parts)
