"""LoRa time-on-air, duty-cycle periods and polled-network capacity.

All durations are in seconds. The payload-symbol count follows the SX1276
datasheet expression; the canonical radio profile (8 preamble symbols,
explicit header, CRC on, CR 4/5) is the one under which the deployed
school networks were dimensioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

VALID_BANDWIDTHS = (125_000, 250_000, 500_000)

#: Symbol time at or above which the low-data-rate optimisation is switched on
#: when ``ldro="auto"``.
LDRO_AUTO_THRESHOLD = 16e-3


@dataclass(frozen=True)
class RadioConfig:
    sf: int = 7
    bw: int = 125_000
    cr: int = 1
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    ldro: Literal["on", "off", "auto"] = "auto"

    def __post_init__(self):
        if not 6 <= self.sf <= 12:
            raise ValueError(f"sf must be in [6, 12], got {self.sf}")
        if self.bw not in VALID_BANDWIDTHS:
            raise ValueError(f"bw must be one of {VALID_BANDWIDTHS} Hz, got {self.bw}")
        if not 1 <= self.cr <= 4:
            raise ValueError(f"cr index must be in 1..4 (4/5..4/8), got {self.cr}")
        if self.preamble_symbols < 6:
            raise ValueError("preamble_symbols must be >= 6")
        if self.ldro not in ("on", "off", "auto"):
            raise ValueError(f"ldro must be on/off/auto, got {self.ldro!r}")

    @property
    def low_data_rate_optimize(self) -> bool:
        if self.ldro == "auto":
            return symbol_time(self) >= LDRO_AUTO_THRESHOLD
        return self.ldro == "on"


@dataclass(frozen=True)
class AirtimeBreakdown:
    symbol_time: float
    preamble_duration: float
    payload_symbols: int
    payload_duration: float
    total: float


@dataclass(frozen=True)
class RegulatoryLimit:
    duty_cycle: float = 0.01

    def __post_init__(self):
        if not 0 < self.duty_cycle <= 1:
            raise ValueError("duty_cycle must be in (0, 1]")

    @property
    def budget_per_hour(self) -> float:
        return self.duty_cycle * 3600.0


EU868 = RegulatoryLimit(0.01)

#: (SF, BW) pairs used by the two deployed configurations.
CONFIG_1 = RadioConfig(sf=9, bw=125_000)
CONFIG_2 = RadioConfig(sf=7, bw=500_000)


def symbol_time(cfg: RadioConfig) -> float:
    return (1 << cfg.sf) / cfg.bw


def payload_symbol_count(cfg: RadioConfig, payload_len: int) -> int:
    if payload_len < 0:
        raise ValueError("payload_len must be >= 0")
    de = 1 if cfg.low_data_rate_optimize else 0
    denom = 4 * (cfg.sf - 2 * de)
    if denom <= 0:
        raise ValueError(f"SF{cfg.sf} with low-data-rate optimisation has no valid symbol count")
    ih = 0 if cfg.explicit_header else 1
    crc = 1 if cfg.crc_on else 0
    num = 8 * payload_len - 4 * cfg.sf + 28 + 16 * crc - 20 * ih
    return 8 + max(math.ceil(num / denom) * (cfg.cr + 4), 0)


def time_on_air(cfg: RadioConfig, payload_len: int) -> AirtimeBreakdown:
    """Airtime of one LoRa frame carrying ``payload_len`` bytes.

    >>> round(time_on_air(RadioConfig(sf=7, bw=125_000), 60).total * 1e3, 3)
    112.896
    """
    if payload_len > 255:
        raise ValueError("LoRa payload is limited to 255 bytes")
    ts = symbol_time(cfg)
    n = payload_symbol_count(cfg, payload_len)
    preamble = (cfg.preamble_symbols + 4.25) * ts
    payload = n * ts
    return AirtimeBreakdown(ts, preamble, n, payload, preamble + payload)


def min_tx_period(toa: float, limit: RegulatoryLimit = EU868) -> float:
    """Shortest legal spacing between frame starts of a single device."""
    if toa <= 0:
        raise ValueError("toa must be positive")
    return toa / limit.duty_cycle


def polled_capacity(
    n_nodes: int,
    drp_cfg: RadioConfig,
    drp_len: int = 4,
    window: float = 900.0,
    limit: RegulatoryLimit = EU868,
) -> dict[str, float]:
    """Per-node poll period and packets per window when the gateway's own
    duty cycle is the only constraint. ``max_packets`` is a real number."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    period = n_nodes * min_tx_period(time_on_air(drp_cfg, drp_len).total, limit)
    return {"per_node_period": period, "max_packets": window / period}


def poll_slot_duration(
    drp_cfg: RadioConfig,
    gw_delay: float = 0.050,
    sensor_latency: float = 0.037,
    *,
    drp_len: int = 4,
    dp_len: int = 60,
    limit: RegulatoryLimit = EU868,
) -> float:
    """Spacing between consecutive DRPs under fixed-gap pacing.

    The exchange (DRP, sensor read, DP, controller delay) and the regulatory
    gap overlap; the controller delay and sensor read are then paid once more
    because the gateway only re-arms its request timer after the previous
    exchange has been processed.
    """
    if gw_delay < 0 or sensor_latency < 0:
        raise ValueError("delays must be >= 0")
    drp = time_on_air(drp_cfg, drp_len).total
    dp = time_on_air(drp_cfg, dp_len).total
    exchange = drp + dp + gw_delay + sensor_latency
    return max(min_tx_period(drp, limit), exchange) + gw_delay + sensor_latency


def packets_per_window(
    n_nodes: int,
    slot: float,
    window: float = 900.0,
) -> int:
    """Whole polls each node receives in one window at a fixed slot."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    return math.floor(window / (n_nodes * slot) + 1e-9)
