"""Run the full desk-scale study set into an output directory.

Equivalent to the desk-profile CLI subcommands run back to back with one
seed, reusing one simulated record set where the studies allow it.

Usage: python scripts/run_desk_suite.py [OUT_DIR] [SEED]
"""

import sys
import time
from pathlib import Path

from inertialab.cli import main as cli


def run(out_root, seed):
    t0 = time.perf_counter()
    common = ["--profile", "desk", "--seed", str(seed)]
    jobs = [
        ("gen-data", []),
        ("train", []),
        ("compare-windows", []),
        ("compare-models", []),
        ("compare-snr", []),
        ("select-features", ["--set", "dataset.amplitudes=[0.001,0.002,0.003,0.004,0.005,0.006,0.007,0.008,0.009,0.01]",
                             "--set", "train.epochs=25"]),
    ]
    for name, extra in jobs:
        out = Path(out_root) / name.replace("-", "_")
        print(f"== {name} -> {out}", flush=True)
        rc = cli([name, "--out", str(out), *common, *extra])
        if rc != 0:
            print(f"{name} failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"done in {time.perf_counter() - t0:.0f} s")
    return 0


if __name__ == "__main__":
    out_root = sys.argv[1] if len(sys.argv) > 1 else "out/desk"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    sys.exit(run(out_root, seed))
