"""Command line entry point: ``iotnetsim airtime | simulate | report``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .airtime import RadioConfig, RegulatoryLimit, min_tx_period, polled_capacity, time_on_air
from .metrics import ConsistencyError, StatRow, markdown_table, stat_rows
from .runner import MANIFEST, run, write_run
from .scenario import SCHEMA_VERSION, ScenarioError, load, perfect_channel
from .simcore import SimulationError

OUT_ENV = "IOTNETSIM_OUT"


# ---------------------------------------------------------------------------
# airtime


def cmd_airtime(args) -> int:
    limit = RegulatoryLimit(args.duty_cycle)
    rows = []
    for sf in args.sf:
        for bw_khz in args.bw:
            if sf == 6 and not args.implicit_header:
                print("error: SF6 needs --implicit-header on the SX127x", file=sys.stderr)
                return 1
            try:
                cfg = RadioConfig(sf=sf, bw=int(round(bw_khz * 1000)), cr=args.cr,
                                  preamble_symbols=args.preamble,
                                  explicit_header=not args.implicit_header,
                                  crc_on=not args.no_crc, ldro=args.ldro)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            for pl in args.payload:
                try:
                    toa = time_on_air(cfg, pl).total
                except ValueError as exc:
                    print(f"error: {exc}", file=sys.stderr)
                    return 1
                row = {"sf": sf, "bw_khz": f"{bw_khz:g}", "payload": pl,
                       "toa_ms": f"{toa * 1e3:.3f}", "min_period_s": f"{min_tx_period(toa, limit):.4f}"}
                if args.nodes is not None:
                    cap = polled_capacity(args.nodes, cfg, pl, args.window, limit)
                    row["node_period_s"] = _truncate(cap["per_node_period"], 2)
                    row["max_packets"] = _truncate(cap["max_packets"], 2)
                rows.append(row)
    print(_render(rows, args.csv), end="")
    return 0


def _truncate(x: float, digits: int) -> str:
    # capacity tables cut rather than round, so a ceiling is never overstated
    scale = 10 ** digits
    return f"{math.floor(x * scale + 1e-9) / scale:.{digits}f}"


def _render(rows: list[dict], as_csv: bool) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    if as_csv:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.rjust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(str(r[c]).rjust(widths[c]) for c in cols))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulate


def _simulate_one(job: tuple) -> tuple[int, str]:
    path, seed, out_root, perfect, occupancy, duration = job
    try:
        scen = load(path)
        if seed is not None:
            scen = scen.with_overrides(seed=seed)
        if duration is not None:
            scen = scen.with_overrides(duration=duration)
        if perfect or occupancy is not None:
            scen = perfect_channel(scen, occupancy=occupancy) if perfect else _with_occupancy(scen, occupancy)
    except (ScenarioError, OSError) as exc:
        return 1, f"{path}: {exc}"
    try:
        result = run(scen)
    except (ConsistencyError, SimulationError) as exc:
        return 2, f"{path}: runtime inconsistency: {exc}"
    out = Path(out_root) / f"{Path(path).stem}_seed{scen.seed}"
    write_run(result, out)
    return 0, str(out)


def _with_occupancy(scen, occupancy):
    d = scen.to_dict()
    for n in d["topology"]["nodes"]:
        n["occupancy"] = occupancy
    return scen.with_overrides(topology=d["topology"])


def cmd_simulate(args) -> int:
    out_root = args.out or os.environ.get(OUT_ENV) or "runs"
    jobs = [(p, args.seed, out_root, args.perfect_channel, args.occupancy, args.duration)
            for p in args.scenario]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    code = 0
    for status, msg in results:
        if status:
            print(f"error: {msg}", file=sys.stderr)
            code = max(code, status)
        else:
            print(msg)
    return code


# ---------------------------------------------------------------------------
# report


def _read_run(run_dir: Path) -> tuple[dict, list[dict]]:
    manifest = json.loads((run_dir / MANIFEST).read_text())
    with open(run_dir / "windows.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return manifest, rows


def _column(rows: list[dict], node: str, col: str) -> list[float]:
    return [float(r[col]) for r in rows if r["node_id"] == node and r[col] != ""]


def cmd_report(args) -> int:
    runs = []
    for d in args.run_dir:
        try:
            runs.append((Path(d), *_read_run(Path(d))))
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {d}: cannot read run ({exc})", file=sys.stderr)
            return 1
    versions = {m.get("schema_version") for _, m, _ in runs}
    if len(versions) != 1 or versions != {SCHEMA_VERSION}:
        print(f"error: runs use mismatched schema versions {sorted(map(str, versions))}", file=sys.stderr)
        return 1

    nodes = sorted({r["node_id"] for _, _, rows in runs for r in rows})
    out = [f"# Run comparison ({len(runs)} run{'s' if len(runs) > 1 else ''})", ""]
    for metric, title in (("ndr", "Network Delivery Ratio (NDR)"), ("pdr", "Packet Delivery Ratio (PDR)"),
                          ("crc_err_ratio", "CRC Error Ratio"), ("retx_ratio", "Re-transmission Ratio")):
        table: dict[str, list[StatRow | None]] = {}
        for run_dir, m, rows in runs:
            if metric != "ndr" and m["technology"] != "lora":
                continue
            label = f"{m['name'] or run_dir.name} (max {m['max_packets']:g})" if metric == "ndr" else (m["name"] or run_dir.name)
            table[label] = [(stat_rows(v) if (v := _column(rows, n, metric)) else None) for n in nodes]
        if table:
            out.append(markdown_table(title, nodes, table))
    text = "\n".join(out)
    print(text)

    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "technology", "node_id", "metric", "n", "min", "q1", "median", "q3", "max", "mean"])
            for run_dir, m, rows in runs:
                metrics = ("ndr", "pdr", "crc_err_ratio", "retx_ratio", "rssi_avg") if m["technology"] == "lora" \
                    else ("ndr", "rssi_avg")
                for n in nodes:
                    for metric in metrics:
                        v = _column(rows, n, metric)
                        if not v:
                            continue
                        q = np.quantile(v, [0, 0.25, 0.5, 0.75, 1.0])
                        w.writerow([run_dir.name, m["technology"], n, metric, len(v),
                                    *(f"{x:.6f}" for x in q), f"{np.mean(v):.6f}"])
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotnetsim", description="Indoor IoT network simulator and LoRa airtime tools")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("airtime", help="LoRa time on air, duty-cycle periods and polled capacity")
    a.add_argument("--sf", type=int, nargs="+", default=[7])
    a.add_argument("--bw", type=float, nargs="+", default=[125], help="bandwidth in kHz")
    a.add_argument("--payload", type=int, nargs="+", default=[60], help="payload length in bytes")
    a.add_argument("--nodes", type=int, help="polled nodes sharing the gateway's duty cycle")
    a.add_argument("--window", type=float, default=900.0, help="capacity window in seconds")
    a.add_argument("--cr", type=int, default=1, help="coding rate index, 1..4 for 4/5..4/8")
    a.add_argument("--preamble", type=int, default=8)
    a.add_argument("--implicit-header", action="store_true")
    a.add_argument("--no-crc", action="store_true")
    a.add_argument("--ldro", choices=("on", "off", "auto"), default="auto")
    a.add_argument("--duty-cycle", type=float, default=0.01)
    a.add_argument("--csv", action="store_true", help="emit CSV instead of an aligned table")
    a.set_defaults(func=cmd_airtime)

    s = sub.add_parser("simulate", help="run scenario files or bundled presets")
    s.add_argument("scenario", nargs="+", help="scenario JSON path or preset name")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./runs)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--duration", type=float)
    s.add_argument("--perfect-channel", action="store_true", help="disable jitter and random corruption")
    s.add_argument("--occupancy", type=float, help="override every node's PIR motion probability")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="compare finished runs")
    r.add_argument("run_dir", nargs="+")
    r.add_argument("--out", help="write per-node boxplot quantiles as CSV")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "airtime" and args.nodes is not None and args.nodes < 1:
        print("error: --nodes must be >= 1", file=sys.stderr)
        return 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
