#!/usr/bin/env python3
"""Illustrative two-player game: SRFB against the fixed-step baselines.

Prints, per solver, the median distance to the equilibrium reached over the
seeds, and optionally plots the median ||x_k|| curves.
"""

import argparse
from pathlib import Path

import numpy as np

from sgne.experiment import load_config, run_in_memory

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "illustrative.json"))
    ap.add_argument("--plot", metavar="PNG")
    args = ap.parse_args()

    resolved, runs = run_in_memory(load_config(args.config))
    curves = {}
    for label, _, rec in runs:
        curves.setdefault(label, []).append(rec.column("dist_to_ref"))

    print(f"{'solver':8} {'step':>8} {'median min|x|':>14} {'converged':>10}")
    for r in resolved:
        best = [float(np.min(c)) for c in curves[r.spec.label]]
        conv = sum(rec.status == "converged" for lab, _, rec in runs if lab == r.spec.label)
        print(f"{r.spec.label:8} {r.steps.alpha[0]:8.4f} {np.median(best):14.2e} {conv:>7}/{len(best)}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for label, cs in curves.items():
            n = min(len(c) for c in cs)
            ax.semilogy(np.median([c[:n] for c in cs], axis=0), label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("median ||x_k||")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
