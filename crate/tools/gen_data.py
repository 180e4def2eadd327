"""Regenerates the sample feeders and baseline load profiles under scenarios/.

The feeders are synthetic stand-ins with IEEE-like topologies. Impedances
are per-unit-length figures times segment lengths; the values are chosen so
the baseline peak keeps every node above the voltage floor with margin.

Usage: python3 tools/gen_data.py
"""

import math
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "scenarios"

# Ohms per kft for the two conductor classes.
TRUNK = (0.062, 0.118)
LATERAL = (0.115, 0.112)


def write_feeder(path, name, slack_kv, edges, evs, shares):
    lines = [f'name = "{name}"', f"slack_voltage_kv = {slack_kv}", ""]
    for parent, child, r, x in edges:
        lines += ["[[edge]]", f"parent = {parent}", f"child = {child}", f"r_ohm = {r:.5f}", f"x_ohm = {x:.5f}", ""]
    for node in range(1, len(evs) + 1):
        lines += ["[[node]]", f"id = {node}", f"evs = {evs[node - 1]}", f"load_share = {shares[node - 1]:.4f}", ""]
    path.write_text("\n".join(lines))


def segment(parent, child, kft, cls, scale=1.0):
    r, x = cls
    return (parent, child, r * kft * scale, x * kft * scale)


def ieee13():
    # Node numbering follows a depth-first walk from the substation.
    spec = [
        (0, 1, 2.0, TRUNK),
        (1, 2, 0.5, LATERAL),
        (2, 3, 0.6, LATERAL),
        (1, 4, 0.5, LATERAL),
        (4, 5, 0.3, LATERAL),
        (1, 6, 2.0, TRUNK),
        (6, 7, 0.3, LATERAL),
        (7, 8, 0.3, LATERAL),
        (6, 9, 0.1, TRUNK),
        (9, 10, 0.5, LATERAL),
        (9, 11, 0.8, LATERAL),
        (6, 12, 1.0, TRUNK),
    ]
    edges = [segment(p, c, l, cls, 1.25) for p, c, l, cls in spec]
    evs = [0 if n in (1, 6) else 50 for n in range(1, 13)]
    weights = [0, 1.2, 0.8, 1.1, 0.6, 0, 0.7, 0.5, 1.0, 0.9, 0.6, 1.4]
    total = sum(weights)
    write_feeder(ROOT / "feeders" / "ieee13.toml", "ieee13-sample", 4.16, edges, evs, [w / total for w in weights])


def ieee123():
    rng = random.Random(123)
    n = 122
    # Depth-first numbering: each new node attaches to a node on the current
    # root path, so contiguous id ranges form connected sub-feeders.
    edges = []
    path = [0]
    depth_cap = 14
    for child in range(1, n + 1):
        if child > 1:
            back = 0
            roll = rng.random()
            if roll < 0.18:
                back = rng.randint(1, 3)
            elif roll < 0.24:
                back = rng.randint(4, 8)
            if len(path) > depth_cap:
                back = max(back, len(path) - depth_cap + rng.randint(1, 4))
            back = min(back, len(path) - 1)
            if back:
                del path[-back:]
        parent = path[-1]
        trunk = len(path) <= 4
        kft = rng.uniform(0.25, 0.6) if trunk else rng.uniform(0.15, 0.45)
        edges.append(segment(parent, child, kft, TRUNK if trunk else LATERAL, 1.8))
        path.append(child)
    evs = [0 if j in (1, 6) else 5 for j in range(1, n + 1)]
    weights = [0.0 if j in (1, 6) else rng.uniform(0.5, 1.5) for j in range(1, n + 1)]
    total = sum(weights)
    write_feeder(ROOT / "feeders" / "ieee123.toml", "ieee123-sample", 4.16, edges, evs, [w / total for w in weights])


def baseline(path, peak_kw, trough_kw, morning_kw):
    # 52 slots of 15 min from 19:00: evening peak, early-morning trough,
    # morning ramp.
    rows = ["# synthetic feeder-level baseline load", "slot,time,baseline_kw"]
    for t in range(52):
        hour = 19 + t * 0.25
        clock = (19 * 60 + 15 * t) % (24 * 60)
        if hour < 20.0:
            value = peak_kw
        elif hour < 27.5:
            s = (hour - 20.0) / 7.5
            value = trough_kw + (peak_kw - trough_kw) * 0.5 * (1 + math.cos(math.pi * s))
        elif hour < 28.5:
            value = trough_kw
        else:
            s = (hour - 28.5) / 3.5
            value = trough_kw + (morning_kw - trough_kw) * 0.5 * (1 - math.cos(math.pi * s))
        rows.append(f"{t},{clock // 60:02d}:{clock % 60:02d},{value:.1f}")
    path.write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    ieee13()
    ieee123()
    baseline(ROOT / "baselines" / "ieee13.csv", 1600.0, 800.0, 1250.0)
    baseline(ROOT / "baselines" / "ieee123.csv", 1900.0, 950.0, 1500.0)
