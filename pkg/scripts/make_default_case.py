"""Regenerate the bundled 24-bus case file.

Topology and loads follow the classic 24-bus reliability test system
(24 buses, 17 load buses, 38 branches).  The generator fleet is 38 units
spread over the 10 generator buses; per-unit inertia constants are typical
for each unit class and give a baseline system inertia near 4.5 s.  Branch
susceptances are the RTS reactances converted to the system base (sum of
unit ratings).  Damping is a flat 1.0 p.u. per machine: a documented
workbench default, not source data.

Run from the repo root:  python scripts/make_default_case.py
"""

import math
from pathlib import Path

OMEGA = 2.0 * math.pi * 60.0

# bus id -> load MW (17 loaded buses, total 2850 MW)
LOADS = {
    1: 108, 2: 97, 3: 180, 4: 74, 5: 71, 6: 136, 7: 125, 8: 171, 9: 175,
    10: 195, 13: 265, 14: 194, 15: 317, 16: 100, 18: 333, 19: 181, 20: 128,
}

# (from, to, reactance p.u. on 100 MVA)
BRANCHES_X100 = [
    (1, 2, 0.014), (1, 3, 0.211), (1, 5, 0.085), (2, 4, 0.127), (2, 6, 0.192),
    (3, 9, 0.119), (3, 24, 0.084), (4, 9, 0.104), (5, 10, 0.088),
    (6, 10, 0.061), (7, 8, 0.061), (8, 9, 0.165), (8, 10, 0.165),
    (9, 11, 0.084), (9, 12, 0.084), (10, 11, 0.084), (10, 12, 0.084),
    (11, 13, 0.048), (11, 14, 0.042), (12, 13, 0.048), (12, 23, 0.097),
    (13, 23, 0.087), (14, 16, 0.059), (15, 16, 0.017), (15, 21, 0.049),
    (15, 21, 0.049), (15, 24, 0.052), (16, 17, 0.026), (16, 19, 0.023),
    (17, 18, 0.014), (17, 22, 0.105), (18, 21, 0.026), (18, 21, 0.026),
    (19, 20, 0.040), (19, 20, 0.040), (20, 23, 0.022), (20, 23, 0.022),
    (21, 22, 0.068),
]

# bus -> list of (rated MVA, H seconds) unit tuples; 38 units.  Ratings are
# chosen so every PMU bus carries a comparable aggregate swing coefficient:
# a very light machine next to a stiff corridor overshoots the injection-bus
# transient and muddies the inertia signature the corpus is built to expose.
UNITS = {
    1: [(85, 3.6)] * 4,
    2: [(85, 3.4)] * 4,
    7: [(85, 3.8)] * 4,
    13: [(90, 4.0)] * 4,
    15: [(85, 3.7)] * 4,
    16: [(85, 3.9)] * 4,
    18: [(115, 4.6)] * 3,
    21: [(85, 4.2)] * 4,
    22: [(80, 3.3)] * 4,
    23: [(115, 4.4)] * 3,
}

DAMPING = 1.0
MONITORED = [1, 2, 7, 13, 15, 16, 18, 21, 22, 23]


def main():
    system_base = sum(s for units in UNITS.values() for s, _ in units)
    n_units = sum(len(u) for u in UNITS.values())
    lines = [
        "# Bundled 24-bus study case: 24 buses (17 with load), 38 branches,",
        f"# {n_units} generating units on {len(UNITS)} generator buses.",
        "# J is in 1e6 kg.m^2 (0.5*J*omega^2 in MW.s); system base = sum of ratings"
        f" = {system_base} MVA.",
        "# Damping 1.0 p.u. per machine is a workbench default, not source data.",
        "INERTIA-CASE v1",
        "",
        "[BUS]",
    ]
    for bus in range(1, 25):
        kind = "generator" if bus in UNITS else "load"
        lines.append(f"{bus:3d}  {kind:9s}  {float(LOADS.get(bus, 0.0)):6.1f}")

    lines += ["", "[BRANCH]"]
    for f, t, x100 in BRANCHES_X100:
        b_sys = (1.0 / x100) * (100.0 / system_base)
        lines.append(f"{f:3d} {t:3d}  {b_sys:.10f}")

    lines += ["", "[GEN]"]
    for bus in sorted(UNITS):
        for k, (rated, h) in enumerate(UNITS[bus], start=1):
            j = 2.0 * h * rated / (OMEGA * OMEGA)
            lines.append(
                f"G{bus}-{k:<3d} {bus:3d}  {j:.12e}  {OMEGA:.12f}  {rated:6.1f}  {DAMPING:.2f}"
            )

    lines += ["", "[MONITOR]", " ".join(str(b) for b in MONITORED), ""]

    out = Path(__file__).resolve().parents[1] / "src" / "inertialab" / "cases" / "ieee24.case"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines), encoding="utf-8")
    print(f"wrote {out} (system base {system_base} MVA, {n_units} units)")


if __name__ == "__main__":
    main()
