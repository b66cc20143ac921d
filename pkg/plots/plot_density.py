#!/usr/bin/env python3
"""Gradient-density trace with the participation threshold line.

Density values and the threshold come straight from the CSV; pass
``--participants`` only to override the threshold line with n**0.25.

Usage: plot_density.py --csv out/fedlion_E5_seed0.csv --out fig2.png
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from figlib import read_metrics_csv


def build_figure(csv_path, participants=None) -> "plt.Figure":
    series = read_metrics_csv(csv_path)
    rounds = series.rounds
    density = series.columns["density"]
    if participants is not None:
        threshold = float(participants) ** 0.25 * np.ones_like(rounds)
    else:
        threshold = series.columns["density_threshold"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(rounds, density, label="gradient density")
    ax.plot(rounds, threshold, linestyle="--", label="n^(1/4)")
    ax.set_xlabel("communication round")
    ax.set_ylabel("|v|_1 / |v|_2")
    ax.set_title(f"{series.algorithm}, E = {series.E}, seed {series.seed}")
    ax.legend()
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--csv", required=True, help="metrics CSV for one run")
    parser.add_argument("--participants", type=int, default=None,
                        help="override the threshold with this n")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    fig = build_figure(args.csv, args.participants)
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
