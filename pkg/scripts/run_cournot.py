#!/usr/bin/env python3
"""Network Cournot benchmark with SRFB.

Reports residual, feasibility and dual consensus at iteration 10 and at the
end of each seed. The full config takes about four minutes on one core; use
``--seeds`` and ``--iters`` for a quicker look.
"""

import argparse
import dataclasses
import time
from pathlib import Path

import numpy as np

from sgne.experiment import load_config, run_in_memory

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "cournot.json"))
    ap.add_argument("--seeds", type=int, nargs="*")
    ap.add_argument("--iters", type=int)
    ap.add_argument("--plot", metavar="PNG")
    args = ap.parse_args()

    exp = load_config(args.config)
    if args.seeds:
        exp = exp.with_seeds(args.seeds)
    if args.iters is not None:
        exp = dataclasses.replace(exp, max_iters=args.iters)

    t0 = time.perf_counter()
    resolved, runs = run_in_memory(exp)
    print(f"tuned alpha {resolved[0].steps.alpha[0]:.4e}, {time.perf_counter() - t0:.0f}s total")
    print(f"{'seed':>4} {'res@10':>9} {'res':>9} {'feas':>9} {'consensus':>10}")
    for _, seed, rec in runs:
        res = rec.column("residual")
        print(f"{seed:4d} {res[min(10, len(res) - 1)]:9.3f} {res[-1]:9.3f} "
              f"{rec.last.feasibility_gap:9.2e} {rec.last.consensus_gap:10.2e}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        for col, ax in zip(("residual", "feasibility_gap", "consensus_gap"), axes):
            for _, seed, rec in runs:
                ax.semilogy(np.maximum(rec.column(col), 1e-16), lw=0.8, label=f"seed {seed}")
            ax.set_title(col)
            ax.set_xlabel("iteration")
        axes[0].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
