"""Motion traffic crowding out periodic reports on an 802.15.4 tree.

Every node reports an EDP every 10 s and a PDP whenever its PIR sensor sees
motion. The gateway's radio hands frames to its host over a slow serial
link, so busy periods overflow the radio's buffer and EDPs get lost.

Run: python3 tutorials/03_xbee_saturation.py
"""

import numpy as np

from iotnetsim.metrics import packet_ratio_series
from iotnetsim.runner import run
from iotnetsim.scenario import load

base = load("xbee_school_c")
for occupancy in (0.0, 0.1, 0.3, 0.5):
    d = base.to_dict()
    for n in d["topology"]["nodes"]:
        n["occupancy"] = occupancy
    # 5-minute windows, as used for the packet-ratio series
    scen = base.with_overrides(seed=2, duration=3600.0, topology=d["topology"],
                               reporting={"window": 300.0, "max_packets": None})
    result = run(scen)
    edp = np.array([sum(w.edp_delivered for w in result.windows if w.window_start == t)
                    for t in sorted({w.window_start for w in result.windows})])
    pdp = np.array([sum(w.pdp_delivered for w in result.windows if w.window_start == t)
                    for t in sorted({w.window_start for w in result.windows})])
    ratios = packet_ratio_series(edp + pdp, edp=edp, pdp=pdp)
    lost = result.network.devices["gw"].stats.rx_overflow
    print(f"occupancy {occupancy:.1f}: EDPs/5 min {edp[1:].mean():6.1f}  PDPs/5 min {pdp[1:].mean():6.1f}  "
          f"host buffer drops {lost:5d}  EDP ratio at PDP peak {ratios['edp'][pdp.argmax()]:.2f}")

# the tree itself: node6 only reaches the gateway through a weak relay link
for dev_id, tree in run(base).network.tree().items():
    print(f"{dev_id}: parent {tree.parent}, depth {tree.depth}")
