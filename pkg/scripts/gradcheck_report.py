"""Per-op and per-layer-kind finite-difference report with a configurable sample count.

    python3 scripts/gradcheck_report.py --samples 50
"""

import argparse
import time

from drln.gradcheck import run_gradcheck

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()
    for seed in args.seeds:
        t0 = time.perf_counter()
        results = run_gradcheck(samples=args.samples, seed=seed)
        worst = max(results, key=lambda r: r.worst)
        print(f"seed {seed}: worst {worst.worst:.2e} in {worst.op} ({time.perf_counter() - t0:.1f}s)")
        for r in results:
            print(f"    {r.op:<32} {r.worst:.2e}")
