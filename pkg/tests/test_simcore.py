import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iotnetsim.simcore import (
    ChannelModel,
    Engine,
    LinkModel,
    Medium,
    RngStreams,
    SimulationError,
    Transmission,
    default_lora_sensitivity,
    link_rssi,
    resolve_reception,
)

KEY = ("lora868", 0, 7)


def test_earlier_event_fires_first():
    eng, fired = Engine(), []
    eng.schedule(5.0, fired.append, "A")
    eng.schedule(3.0, fired.append, "B")
    eng.run_until(10)
    assert fired == ["B", "A"]


def test_ties_fire_in_insertion_order():
    eng, fired = Engine(), []
    eng.schedule(5.0, fired.append, "A")
    eng.schedule(5.0, fired.append, "B")
    eng.run_until(5.0)
    assert fired == ["A", "B"]
    assert eng.now() == 5.0


def test_run_until_zero_fires_nothing_in_future():
    eng, fired = Engine(), []
    eng.schedule(1.0, fired.append, "A")
    eng.run_until(0)
    assert fired == [] and eng.pending() == 1


def test_past_scheduling_rejected_and_cancel():
    eng, fired = Engine(), []
    eng.run_until(2.0)
    with pytest.raises(SimulationError):
        eng.schedule(1.0, fired.append, "late")
    ev = eng.after(1.0, fired.append, "x")
    ev.cancel()
    eng.run_until(5)
    assert fired == []


@settings(max_examples=50)
@given(st.lists(st.floats(0, 100, allow_nan=False), max_size=40))
def test_engine_clock_never_goes_back(times):
    eng, seen = Engine(), []
    for t in times:
        eng.schedule(t, lambda: seen.append(eng.now()))
    eng.run_until(100)
    assert seen == sorted(seen) and len(seen) == len(times)


def test_trace_is_reproducible():
    def build():
        eng = Engine(trace=True)
        rng = RngStreams(7).get("x")
        for _ in range(20):
            eng.schedule(float(rng.uniform(0, 10)), math.sqrt, 4.0)
        eng.run_until(10)
        return eng.trace
    assert build() == build()


def test_rng_streams_are_keyed_and_stable():
    a, b = RngStreams(3), RngStreams(3)
    assert a.get("node", "n1").random() == b.get("node", "n1").random()
    assert a.get("node", "n2").random() != RngStreams(3).get("node", "n1").random()
    assert RngStreams(4).get("node", "n1").random() != RngStreams(3).get("node", "n1").random()


def test_explicit_rssi_without_jitter():
    model = LinkModel(matrix={("n1", "gw"): -45.06})
    assert link_rssi("n1", "gw", model, np.random.default_rng(0)) == -45.06
    with pytest.raises(KeyError):
        model.mean_rssi("gw", "n1")


def test_jitter_converges_to_configured_moments():
    model = LinkModel(matrix={("n3", "gw"): -87.78}, jitter_sd=2.59)
    rng = np.random.default_rng(11)
    x = np.array([link_rssi("n3", "gw", model, rng) for _ in range(10_000)])
    n = x.size
    assert abs(x.mean() + 87.78) < 3 * 2.59 / math.sqrt(n)
    assert abs(x.std(ddof=1) - 2.59) < 3 * 2.59 / math.sqrt(2 * (n - 1))


def test_path_loss_at_reference_distance():
    model = LinkModel(mode="path-loss", positions={"a": (0, 0, 0), "b": (1, 0, 0)}, default_tx_power=14, pl0=40)
    assert model.mean_rssi("a", "b") == pytest.approx(-26.0)


def test_path_loss_counts_walls_and_floors():
    model = LinkModel(mode="path-loss", positions={"a": (0, 0, 0), "b": (10, 0, 1)},
                      default_tx_power=14, pl0=40, gamma=3, wall_loss=5, floor_loss=15,
                      walls=[((5, -1), (5, 1)), ((7, -1), (7, 1)), ((20, -1), (20, 1))])
    assert model.mean_rssi("a", "b") == pytest.approx(14 - (40 + 30 + 2 * 5 + 15))


def test_lora_sensitivity_defaults():
    assert default_lora_sensitivity(9, 125_000) == -129.0
    assert default_lora_sensitivity(7, 500_000) == pytest.approx(-123 + 10 * math.log10(4))


def _channel(curve=((0.0, 0.0),), sens=-120.0):
    return ChannelModel(default_sensitivity=sens, p_corrupt=list(curve))


def test_perfect_channel_is_ok():
    link = LinkModel(matrix={("a", "b"): -90.0})
    out = resolve_reception(Transmission("a", 0, 0.1, KEY, None), "b", [], link, _channel(), np.random.default_rng(1))
    assert out.kind == "ok"


def test_below_sensitivity_is_lost():
    link = LinkModel(matrix={("a", "b"): -130.0})
    out = resolve_reception(Transmission("a", 0, 0.1, KEY, None), "b", [], link, _channel(), np.random.default_rng(1))
    assert out.kind == "lost"


def test_equal_power_overlap_corrupts_both():
    link = LinkModel(matrix={("a", "r"): -70.0, ("c", "r"): -70.0})
    t1, t2 = Transmission("a", 0, 0.1, KEY, None), Transmission("c", 0, 0.1, KEY, None)
    ch = ChannelModel(default_sensitivity=-120, capture_margin=0.0, p_corrupt=[(0, 0)])
    rng = np.random.default_rng(0)
    assert resolve_reception(t1, "r", [t2], link, ch, rng).kind == "corrupted"
    assert resolve_reception(t2, "r", [t1], link, ch, rng).kind == "corrupted"


def test_strong_frame_captures_weak_interferer():
    link = LinkModel(matrix={("a", "r"): -50.0, ("c", "r"): -80.0})
    t1, t2 = Transmission("a", 0, 0.1, KEY, None), Transmission("c", 0.05, 0.1, KEY, None)
    rng = np.random.default_rng(0)
    assert resolve_reception(t1, "r", [t2], link, _channel(), rng).kind == "ok"
    assert resolve_reception(t2, "r", [t1], link, _channel(), rng).kind == "corrupted"


def test_other_spreading_factor_does_not_interfere():
    link = LinkModel(matrix={("a", "r"): -70.0, ("c", "r"): -70.0})
    t1 = Transmission("a", 0, 0.1, KEY, None)
    t2 = Transmission("c", 0, 0.1, ("lora868", 0, 9), None)
    assert resolve_reception(t1, "r", [t2], link, _channel(), np.random.default_rng(0)).kind == "ok"


def test_corruption_frequency_matches_curve():
    # margin 30 dB on a curve that reads 0.04 there
    ch = ChannelModel(default_sensitivity=-120, p_corrupt=[(20, 0.08), (40, 0.0)])
    assert ch.corruption_probability(30) == pytest.approx(0.04)
    link = LinkModel(matrix={("a", "b"): -90.0})
    rng = np.random.default_rng(5)
    tx = Transmission("a", 0, 0.1, KEY, None)
    hits = sum(resolve_reception(tx, "b", [], link, ch, rng).kind == "corrupted" for _ in range(10_000))
    assert abs(hits / 10_000 - 0.04) <= 0.01


def test_resolve_reception_consumes_two_draws():
    link = LinkModel(matrix={("a", "b"): -90.0}, jitter_sd=1.0)
    rng, ref = np.random.default_rng(9), np.random.default_rng(9)
    resolve_reception(Transmission("a", 0, 0.1, KEY, None), "b", [], link, _channel(), rng)
    ref.standard_normal()
    ref.random()
    assert rng.random() == ref.random()


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Transmission("a", 0, 0.0, KEY, None)
    with pytest.raises(ValueError):
        LinkModel(jitter_sd=-1)
    with pytest.raises(ValueError):
        ChannelModel(p_corrupt=[(0, 1.5)])
    with pytest.raises(ValueError):
        resolve_reception(Transmission("a", 0, 0.1, KEY, None), "a", [], LinkModel(), _channel(),
                          np.random.default_rng())


def _medium(devices, rssi=-60.0):
    eng = Engine()
    link = LinkModel(matrix={(a, b): rssi for a in devices for b in devices if a != b})
    med = Medium(eng, link, _channel(), RngStreams(0))
    inbox = {d: [] for d in devices}
    for d in devices:
        med.attach(d, lambda tx, out, d=d: inbox[d].append((tx.sender, out.kind)), band="lora868")
    return eng, med, inbox


def test_medium_delivers_and_counts_collisions():
    eng, med, inbox = _medium(["a", "b", "c"])
    med.transmit(Transmission("a", 0.0, 0.1, KEY, None))
    med.transmit(Transmission("b", 0.0, 0.1, KEY, None))
    eng.run_until(1)
    assert ("a", "corrupted") in inbox["c"] and ("b", "corrupted") in inbox["c"]
    assert inbox["a"] == [] and inbox["b"] == []  # half duplex
    assert med.collisions == 2


def test_medium_rejects_self_overlap():
    eng, med, _ = _medium(["a", "b"])
    med.transmit(Transmission("a", 0.0, 0.1, KEY, None))
    eng.schedule(0.05, lambda: med.transmit(Transmission("a", 0.05, 0.1, KEY, None)))
    with pytest.raises(SimulationError):
        eng.run_until(1)


def test_other_band_is_not_heard():
    eng, med, inbox = _medium(["a", "b"])
    med.transmit(Transmission("a", 0.0, 0.001, ("ism2400", 11, None), None))
    eng.run_until(1)
    assert inbox["b"] == []


def test_carrier_sense_window():
    eng, med, _ = _medium(["a", "b"])
    med.transmit(Transmission("a", 0.0, 0.01, KEY, None))
    assert med.busy_during("b", 0.005, 0.006, -100, KEY)
    assert not med.busy_during("b", 0.011, 0.02, -100, KEY)
    assert not med.busy_during("b", 0.005, 0.006, -50, KEY)
    assert not med.busy_during("a", 0.005, 0.006, -100, KEY)
