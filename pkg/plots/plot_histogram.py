#!/usr/bin/env python3
"""Bar chart of integer update values over -E..E with the stored entropy.

The entropy annotation is read from the JSON, never recomputed.

Usage: plot_histogram.py --json out/fedlion_E5_seed0_hist.json --out fig3.png
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from figlib import read_histogram_json


def build_figure(json_path) -> "plt.Figure":
    E, counts, entropy_bits = read_histogram_json(json_path)
    symbols = np.arange(-E, E + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(symbols, counts, width=0.8)
    ax.set_xlabel("update value")
    ax.set_ylabel("count")
    ax.set_title(f"E = {E}")
    ax.annotate(
        f"entropy = {entropy_bits:.3f} bits/coordinate",
        xy=(0.02, 0.95),
        xycoords="axes fraction",
        va="top",
    )
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--json", required=True, help="histogram JSON for one run")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    fig = build_figure(args.json)
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
