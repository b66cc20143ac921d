"""Per-round measurements and convergence-rate analysis.

The per-round record captures the training loss and the l1/l2 norms of the
exact global gradient at the post-aggregation model, the density of the
averaged minibatch gradient, communication bits, and (for exact-gradient
problems) the measured heterogeneity.  Rate fits regress the log running
average of a metric on log round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import ClientShard
from .vectors import ParamVector, l1_norm

CSV_COLUMNS = (
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

HETEROGENEITY_REGIME_BOUND = 1.0 / 3.0


@dataclass(frozen=True)
class RoundRecord:
    """One row of run metrics; field order matches the CSV schema.

    ``wall_ms`` is reserved and always written as 0: emitted artifacts are
    byte-reproducible, so wall-clock timing must stay out of them.
    """

    round: int
    train_loss: float
    grad_l1: float
    grad_l2: float
    density: float | None
    density_threshold: float
    alpha_hat: float | None
    uplink_bits: int
    downlink_bits: int
    wall_ms: float = 0.0


@dataclass(frozen=True)
class DensityReport:
    density: float
    threshold: float
    dense: bool


def gradient_density(v: ParamVector, n: int) -> DensityReport | None:
    """Ratio ``|v|_1 / |v|_2`` against the participation threshold ``n**0.25``.

    Returns ``None`` for a zero vector, where the density is undefined.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    l2 = float(np.sqrt(np.sum(v.data * v.data)))
    if l2 == 0.0:
        return None
    density = l1_norm(v) / l2
    threshold = float(n) ** 0.25
    return DensityReport(density, threshold, density > threshold)


@dataclass(frozen=True)
class HeterogeneityReport:
    """Worst-case relative l1 deviation of local from global gradients."""

    alpha_hat: float
    per_client_ratios: list[float]
    eval_point: ParamVector

    @property
    def exceeds_regime(self) -> bool:
        """True when the estimate falls outside the alpha <= 1/3 regime."""
        return self.alpha_hat > HETEROGENEITY_REGIME_BOUND


def estimate_alpha(problem, shards: list[ClientShard], x: ParamVector) -> HeterogeneityReport | None:
    """Measure heterogeneity at ``x`` from exact full-batch gradients.

    Returns ``None`` when the global gradient is numerically zero (a
    near-optimum point where the ratio is undefined).
    """
    global_grad = problem.global_gradient(x)
    denom = l1_norm(global_grad)
    if denom < 1e-12:
        return None
    ratios = [
        l1_norm(global_grad - problem.local_gradient(shard, x)) / denom
        for shard in shards
    ]
    return HeterogeneityReport(max(ratios), ratios, x)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    excluded: int


def fit_rate(records: list[RoundRecord], metric: str = "grad_l1") -> RateFit:
    """Least-squares fit of log(running average of ``metric``) vs log(round).

    The running average mirrors the Cesaro average the convergence bound is
    stated for.  Nonpositive metric values are excluded from the average and
    counted in ``excluded``.
    """
    if metric not in ("grad_l1", "grad_l1_sq"):
        raise ValueError(f"unknown rate metric {metric!r}")
    if len(records) < 10:
        raise ValueError(f"need >= 10 records to fit a rate, got {len(records)}")
    values = np.array([r.grad_l1 for r in records], dtype=np.float64)
    if metric == "grad_l1_sq":
        values = values**2
    rounds = np.array([r.round for r in records], dtype=np.float64)
    include = values > 0
    excluded = int((~include).sum())
    cum_sum = np.cumsum(np.where(include, values, 0.0))
    cum_cnt = np.cumsum(include)
    have_avg = cum_cnt > 0
    running = cum_sum[have_avg] / cum_cnt[have_avg]
    log_t = np.log(rounds[have_avg])
    log_r = np.log(running)
    slope, intercept = np.polyfit(log_t, log_r, 1)
    pred = slope * log_t + intercept
    ss_res = float(np.sum((log_r - pred) ** 2))
    ss_tot = float(np.sum((log_r - log_r.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(float(slope), float(intercept), r2, excluded)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_metrics(records: list[RoundRecord], path: str | Path) -> None:
    """Write the metrics CSV; floats use shortest round-trip formatting."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_format_cell(getattr(rec, f.name)) for f in fields(RoundRecord)])


def read_metrics(path: str | Path) -> list[RoundRecord]:
    """Parse a metrics CSV back into records (inverse of :func:`emit_metrics`)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected metrics header {header!r}")
        records = []
        for row in reader:
            vals = dict(zip(CSV_COLUMNS, row))
            records.append(
                RoundRecord(
                    round=int(vals["round"]),
                    train_loss=float(vals["train_loss"]),
                    grad_l1=float(vals["grad_l1"]),
                    grad_l2=float(vals["grad_l2"]),
                    density=float(vals["density"]) if vals["density"] else None,
                    density_threshold=float(vals["density_threshold"]),
                    alpha_hat=float(vals["alpha_hat"]) if vals["alpha_hat"] else None,
                    uplink_bits=int(vals["uplink_bits"]),
                    downlink_bits=int(vals["downlink_bits"]),
                    wall_ms=float(vals["wall_ms"]),
                )
            )
    return records
