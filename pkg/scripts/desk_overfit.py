"""Train the desk preset on 8 fixed texture patches and compare with bicubic on held-out textures.

    python3 scripts/desk_overfit.py --steps 2000 --trace runs/desk_trace.csv
"""

import argparse
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from drln.experiments import DeskExperiment, run_desk_experiment
from drln.trainer import format_trace

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int)
    ap.add_argument("--lr0", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--trace", help="write the loss trace CSV here")
    args = ap.parse_args()
    exp = DeskExperiment()
    overrides = {k: v for k, v in (("max_steps", args.steps), ("lr0", args.lr0), ("seed", args.seed)) if v is not None}
    exp.train = replace(exp.train, **overrides)
    with threadpool_limits(limits=1):
        res = run_desk_experiment(exp)
    losses = [loss for _, loss, _ in res.trace]
    for start in range(0, len(losses), 200):
        print(f"steps {start:5d}-{start + 199:5d}  mean L1 {np.mean(losses[start:start + 200]):.5f}")
    print(f"L1 below {exp.target_l1} (mean of {exp.window} steps) at step {res.reached_at}; {res.train_seconds:.0f}s")
    for b, m in zip(res.bicubic_psnr, res.model_psnr):
        print(f"  bicubic {b:6.2f} dB   model {m:6.2f} dB   {m - b:+.2f}")
    print(f"mean gain over bicubic: {res.gain_db:+.2f} dB")
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(format_trace(res.trace))
