"""Discrete-event simulator for indoor LoRa star and 802.15.4 tree networks."""

from .airtime import (
    CONFIG_1,
    CONFIG_2,
    EU868,
    AirtimeBreakdown,
    RadioConfig,
    RegulatoryLimit,
    min_tx_period,
    packets_per_window,
    payload_symbol_count,
    poll_slot_duration,
    polled_capacity,
    symbol_time,
    time_on_air,
)
from .lora import DutyCycleLedger, GatewayTiming, LoraNetwork, max_rolling_airtime
from .metrics import MetricsWindow, StatRow, crc_error_ratio, ndr, pdr, retx_ratio, stat_rows
from .runner import run, write_run
from .scenario import Scenario, ScenarioError, load, perfect_channel
from .simcore import ChannelModel, Engine, LinkModel, Medium, RngStreams, Transmission
from .wpan import CsmaParams, HostInterface, WpanNetwork, WpanTraffic, tree_join

__version__ = "0.1.0"
