import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iotnetsim.metrics import (
    CSV_COLUMNS,
    ConsistencyError,
    MetricsWindow,
    crc_error_ratio,
    csv_row,
    markdown_table,
    ndr,
    node_stat,
    packet_ratio_series,
    pdr,
    retx_ratio,
    stat_rows,
    summary_markdown,
    windows_csv,
)


def win(**kw):
    return MetricsWindow("node1", 0.0, 900.0, **kw)


def test_pdr_examples():
    assert pdr(win(drps_sent=48, dps_ok=46)) == pytest.approx(0.958, abs=5e-4)
    assert pdr(win(drps_sent=10)) == 0.0
    assert pdr(win(drps_sent=12, dps_ok=12)) == 1.0
    assert pdr(win()) is None


def test_error_and_retx_ratios():
    w = win(drps_sent=100, dps_ok=90, dps_crc_err=5, drp_repeats=9)
    assert crc_error_ratio(w) == pytest.approx(0.05)
    assert retx_ratio(w) == pytest.approx(0.09)
    clean = win(drps_sent=12, dps_ok=12)
    assert crc_error_ratio(clean) == 0.0 and retx_ratio(clean) == 0.0
    assert crc_error_ratio(win()) is None and retx_ratio(win()) is None


def test_ndr_examples_and_inconsistency():
    assert ndr(174, 174) == 1.0
    assert ndr(18, 90) == pytest.approx(0.20)
    assert ndr(155, 174) == pytest.approx(0.89, abs=5e-3)
    with pytest.raises(ConsistencyError):
        ndr(175, 174)
    with pytest.raises(ValueError):
        ndr(1, 0)


def test_window_invariants():
    win(drps_sent=4, dps_ok=3, dps_crc_err=1).check()
    with pytest.raises(ConsistencyError):
        win(drps_sent=4, dps_ok=3, dps_crc_err=2).check()
    with pytest.raises(ConsistencyError):
        win(drps_sent=-1).check()


def test_packet_ratio_series():
    out = packet_ratio_series([120, 185, 150], edp=[100, 133, 140], pdp=[20, 52, 10])
    assert out["aggregated"][1] == 1.0
    assert out["edp"][1] == pytest.approx(133 / 185)
    assert out["edp"][1] == pytest.approx(0.719, abs=5e-4)
    assert list(packet_ratio_series([7, 7, 7])["aggregated"]) == [1.0, 1.0, 1.0]
    assert list(packet_ratio_series([0, 0])["aggregated"]) == [0.0, 0.0]
    with pytest.raises(ValueError):
        packet_ratio_series([])


def test_stat_rows_examples():
    s = stat_rows([12, 12, 12])
    assert (s.avg, s.sd, s.min, s.max) == (12, 0, 12, 12)
    r = stat_rows([0.72, 1.0, 1.0])
    assert r.avg == pytest.approx(0.9067, abs=1e-4)
    assert (r.min, r.max) == (0.72, 1.0)
    assert r.sd == pytest.approx(np.std([0.72, 1.0, 1.0]))  # population SD
    one = stat_rows([3.5])
    assert (one.avg, one.sd, one.min, one.max) == (3.5, 0.0, 3.5, 3.5)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_stat_row_brackets_mean(values):
    r = stat_rows(values)
    assert r.min - 1e-6 <= r.avg <= r.max + 1e-6
    assert r.sd >= 0


counts = st.integers(0, 400)


@st.composite
def windows(draw):
    sent = draw(counts)
    ok = draw(st.integers(0, sent))
    err = draw(st.integers(0, sent - ok))
    return win(drps_sent=sent, dps_ok=ok, dps_crc_err=err, drp_repeats=draw(st.integers(0, sent)),
               rssi_samples=draw(st.lists(st.floats(-130, -30, allow_nan=False), max_size=5)))


@given(windows())
def test_ratios_in_unit_interval_and_reconcile(w):
    w.check()
    for fn in (pdr, crc_error_ratio, retx_ratio):
        v = fn(w)
        assert v is None or 0.0 <= v <= 1.0
    if w.drps_sent:
        lost = w.drps_sent - w.dps_ok - w.dps_crc_err
        assert w.dps_ok + w.dps_crc_err + lost == w.drps_sent and lost >= 0


def test_node_stat_skips_empty_windows():
    ws = [win(drps_sent=10, dps_ok=5), win(), win(drps_sent=4, dps_ok=4)]
    assert node_stat(ws, pdr) == stat_rows([0.5, 1.0])
    assert node_stat([win()], pdr) is None


def test_csv_row_formatting():
    w = MetricsWindow("node3", 900.0, 900.0, drps_sent=174, dps_ok=155, dps_crc_err=3, drp_repeats=20,
                      rssi_samples=[-87.781, -88.0])
    row = csv_row(w, "lora", 174)
    assert tuple(row) == CSV_COLUMNS
    assert row["window_start_s"] == "900.000000"
    assert row["ndr"] == f"{155 / 174:.6f}"
    assert row["rssi_avg"] == "-87.89" and row["rssi_sd"] == "0.11"
    empty = csv_row(MetricsWindow("n", 0.0, 900.0, edp_delivered=90), "wpan", 90)
    assert empty["pdr"] == "" and empty["ndr"] == "1.000000" and empty["rssi_avg"] == ""


@given(st.lists(windows(), min_size=1, max_size=8))
def test_recompute_from_persisted_counters_is_bit_exact(ws):
    live = windows_csv(ws, "lora", 400)
    persisted = [json.loads(json.dumps(w.to_dict())) for w in ws]
    assert windows_csv([MetricsWindow.from_dict(d) for d in persisted], "lora", 400) == live
    rows = list(csv.DictReader(io.StringIO(live)))
    for w, row in zip(ws, rows):
        assert int(row["dps_ok"]) == w.dps_ok and int(row["drps_sent"]) == w.drps_sent


def test_markdown_shapes():
    table = markdown_table("PDR", ["node1", "node2"], {"Conf. 1": [stat_rows([0.9, 1.0]), None]})
    lines = table.splitlines()
    assert lines[0] == "### PDR"
    assert [l.split("|")[2].strip() for l in lines[4:]] == ["Avg.", "SD", "Min.", "Max."]
    assert lines[4].split("|")[3].strip() == "0.95"
    text = summary_markdown([win(drps_sent=12, dps_ok=12)], "lora", 12, "run")
    assert "Packet Delivery Ratio (PDR)" in text and "Network Delivery Ratio (NDR)" in text
