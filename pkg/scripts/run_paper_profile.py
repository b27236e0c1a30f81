"""Full-size corpus run: 1,100 samples, stride 1, 200 epochs.

This is the long configuration (hours on CPU; the LSTM backward pass over
3998 steps dominates).  Artifacts land under OUT_DIR with one subdirectory
per study.

Usage: python scripts/run_paper_profile.py [OUT_DIR] [SEED]
"""

import sys
import time
from pathlib import Path

from inertialab.cli import main as cli


def run(out_root, seed):
    t0 = time.perf_counter()
    common = ["--profile", "paper", "--seed", str(seed)]
    for name in ("gen-data", "train", "compare-windows", "compare-models",
                 "compare-snr"):
        out = Path(out_root) / name.replace("-", "_")
        print(f"== {name} -> {out}", flush=True)
        rc = cli([name, "--out", str(out), *common])
        if rc != 0:
            print(f"{name} failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"done in {time.perf_counter() - t0:.0f} s")
    return 0


if __name__ == "__main__":
    out_root = sys.argv[1] if len(sys.argv) > 1 else "out/paper"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    sys.exit(run(out_root, seed))
