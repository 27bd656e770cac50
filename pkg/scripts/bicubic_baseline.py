"""Bicubic baseline on a benchmark HR directory (e.g. SET5) at one or more scales.

    python3 scripts/bicubic_baseline.py --hr /data/Set5 --scales 2 4 --work /tmp/set5
"""

import argparse
import sys
from pathlib import Path

from drln.cli import main


def run(hr: str, scale: int, work: Path) -> int:
    data, sr = work / f"x{scale}", work / f"x{scale}_sr"
    for argv in (["degrade", "--kind", "bi", "--scale", str(scale), "--hr", hr, "--out", str(data)],
                 ["sr", "--bicubic", "--scale", str(scale), "--input", str(data / "lr"), "--out", str(sr)],
                 ["eval", "--manifest", str(data / "manifest.tsv"), "--sr", str(sr), "--scale", str(scale)]):
        code = main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hr", required=True)
    ap.add_argument("--scales", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--work", default="runs/bicubic")
    args = ap.parse_args()
    sys.exit(max(run(args.hr, s, Path(args.work)) for s in args.scales))
