#!/usr/bin/env python3
"""Training-loss curves per local-step count, one panel per E value.

Each panel draws one line per algorithm (mean over seeds) with a min/max band
when several seeds are present.

Usage: plot_curves.py --glob 'out/*.csv' --out fig1.png
"""

from __future__ import annotations

import argparse
import glob as globlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from figlib import group_runs, seed_band


def build_figure(csv_paths) -> "plt.Figure":
    grouped = group_runs(csv_paths)
    if not grouped:
        raise ValueError("no metrics CSVs matched")
    e_values = sorted(grouped)
    fig, axes = plt.subplots(
        1, len(e_values), figsize=(4.5 * len(e_values), 3.5), squeeze=False, sharey=True
    )
    for ax, E in zip(axes[0], e_values):
        for algorithm in sorted(grouped[E]):
            runs = grouped[E][algorithm]
            mean, lo, hi = seed_band([r.columns["train_loss"] for r in runs])
            rounds = runs[0].rounds
            (line,) = ax.plot(rounds, mean, label=algorithm)
            if len(runs) > 1:
                ax.fill_between(rounds, lo, hi, alpha=0.2, color=line.get_color())
        ax.set_title(f"E = {E}")
        ax.set_xlabel("communication round")
        ax.set_yscale("log")
        ax.legend()
    axes[0][0].set_ylabel("training loss")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--glob", required=True, help="glob for metrics CSV files")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    paths = sorted(globlib.glob(args.glob))
    fig = build_figure(paths)
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out} ({len(paths)} runs)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
