"""How much can a polled LoRa network deliver under the 1% duty cycle?

Run: python3 tutorials/01_airtime_budget.py
"""

from iotnetsim.airtime import CONFIG_1, CONFIG_2, poll_slot_duration, polled_capacity, time_on_air

# a DRP is 4 bytes, a DP reply 60 bytes
for name, cfg in (("Config 1", CONFIG_1), ("Config 2", CONFIG_2)):
    drp, dp = time_on_air(cfg, 4), time_on_air(cfg, 60)
    print(f"{name}: SF{cfg.sf} / {cfg.bw // 1000} kHz")
    print(f"  DRP {drp.total * 1e3:8.3f} ms  (payload part {drp.payload_duration * 1e3:.3f} ms)")
    print(f"  DP  {dp.total * 1e3:8.3f} ms  (payload part {dp.payload_duration * 1e3:.3f} ms)")

    # the gateway sends every DRP, so its budget is shared by all nodes
    for n in (1, 6, 7):
        cap = polled_capacity(n, cfg)
        print(f"  {n} node(s): one poll every {cap['per_node_period']:.2f} s, "
              f"{cap['max_packets']:.2f} packets per 15 min each")

    # a real exchange also waits for the node and the gateway to turn around
    slot = poll_slot_duration(cfg)
    print(f"  slot with processing delays: {slot:.4f} s -> {int(900 // (6 * slot))} packets for 6 nodes\n")
