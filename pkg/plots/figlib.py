"""Readers and aggregation for the simulator's emitted artifacts.

These scripts are pure views: they parse the documented metrics-CSV and
histogram-JSON schemas and never recompute any metric.  Run names follow
``{algorithm}_E{E}_seed{seed}``.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRICS_COLUMNS = (
    "round",
    "train_loss",
    "grad_l1",
    "grad_l2",
    "density",
    "density_threshold",
    "alpha_hat",
    "uplink_bits",
    "downlink_bits",
    "wall_ms",
)

RUN_NAME = re.compile(r"^(?P<algorithm>.+)_E(?P<E>\d+)_seed(?P<seed>\d+)$")


@dataclass(frozen=True)
class RunSeries:
    """One run's metrics columns, floats with NaN for absent optional cells."""

    algorithm: str
    E: int
    seed: int
    columns: dict

    @property
    def rounds(self) -> np.ndarray:
        return self.columns["round"]


def parse_run_name(path: str | Path) -> tuple[str, int, int]:
    stem = Path(path).stem
    match = RUN_NAME.match(stem)
    if match is None:
        raise ValueError(f"{path}: file name {stem!r} is not algorithm_E<k>_seed<s>")
    return match["algorithm"], int(match["E"]), int(match["seed"])


def read_metrics_csv(path: str | Path) -> RunSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for col in METRICS_COLUMNS:
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        for col in header:
            if col not in METRICS_COLUMNS:
                raise ValueError(f"{path}: unexpected column {col!r}")
        idx = {col: header.index(col) for col in METRICS_COLUMNS}
        rows = list(reader)
    columns = {}
    for col in METRICS_COLUMNS:
        cells = [row[idx[col]] for row in rows]
        columns[col] = np.array([float(c) if c else np.nan for c in cells])
    algorithm, E, seed = parse_run_name(path)
    return RunSeries(algorithm=algorithm, E=E, seed=seed, columns=columns)


def read_histogram_json(path: str | Path) -> tuple[int, np.ndarray, float]:
    """Return ``(E, counts over -E..E, entropy_bits)`` from a histogram file."""
    payload = json.loads(Path(path).read_text())
    for key in ("E", "counts", "entropy_bits"):
        if key not in payload:
            raise ValueError(f"{path}: missing key {key!r}")
    E = int(payload["E"])
    counts = np.asarray(payload["counts"], dtype=np.int64)
    if counts.shape != (2 * E + 1,):
        raise ValueError(f"{path}: counts must have 2E+1={2 * E + 1} entries")
    return E, counts, float(payload["entropy_bits"])


def seed_band(series: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean with min/max envelope across seeds; series must share a length."""
    if not series:
        raise ValueError("no series to aggregate")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise ValueError(f"seed series have differing lengths {sorted(lengths)}")
    stack = np.stack(series)
    return stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0)


def group_runs(paths) -> dict[int, dict[str, list[RunSeries]]]:
    """Group CSVs as {E: {algorithm: [series per seed]}} with seeds sorted."""
    grouped: dict[int, dict[str, list[RunSeries]]] = {}
    for path in paths:
        series = read_metrics_csv(path)
        grouped.setdefault(series.E, {}).setdefault(series.algorithm, []).append(series)
    for panels in grouped.values():
        for runs in panels.values():
            runs.sort(key=lambda s: s.seed)
    return grouped
