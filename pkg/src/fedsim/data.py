"""Synthetic federated datasets, non-IID partitioning and minibatch serving.

A :class:`ClientShard` owns a client's local examples (or, for the synthetic
quadratic testbed, its local optimum) together with a private random stream
keyed by ``(seed, client_id)``.  Minibatches are drawn with replacement so the
minibatch gradient is an exactly unbiased estimator of the local gradient.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PartitionError, ShapeError
from .rng import CLIENT_STREAM, DATA_STREAM, substream

PROBLEM_KINDS = (
    "synthetic-quadratic",
    "synthetic-logistic",
    "mlp-classification",
    "external-csv",
)


@dataclass(frozen=True)
class ProblemSpec:
    """What is being optimised: problem family, sizes and known constants.

    ``known_optimum_value`` and ``smoothness_bound`` are populated exactly for
    the synthetic quadratic (closed form) and left ``None`` where no closed
    form exists.  ``smoothness_bound`` is the sum of per-coordinate gradient
    Lipschitz constants; ``noise_scale`` is the summed per-coordinate
    stochastic-gradient noise scale.
    """

    kind: str
    d: int
    N: int
    known_optimum_value: float | None = None
    smoothness_bound: float | None = None
    noise_scale: float | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.d < 1 or self.N < 1:
            raise ValueError(f"d and N must be >= 1, got d={self.d} N={self.N}")
        if self.kind == "synthetic-quadratic":
            if self.known_optimum_value is None or self.smoothness_bound is None:
                raise ValueError(
                    "synthetic-quadratic requires exact known_optimum_value "
                    "and smoothness_bound"
                )


@dataclass
class ClientShard:
    """One client's local data plus its deterministic sampling stream.

    Dataset problems populate ``features``/``labels``; the quadratic testbed
    populates ``center`` (the client's local optimum) instead.  ``rng`` is a
    counter-based stream keyed by ``(seed, client_id)``: its evolution depends
    only on the key and the client's own draw count, never on scheduling.
    """

    client_id: int
    rng: np.random.Generator = field(repr=False)
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.center is None:
            if self.features is None or self.labels is None:
                raise ValueError("shard needs either examples or a center")
            if len(self.features) == 0:
                raise ValueError(f"client {self.client_id} has no examples")
            if len(self.features) != len(self.labels):
                raise ShapeError(
                    f"features/labels length mismatch on client {self.client_id}"
                )

    @property
    def n_examples(self) -> int:
        return 0 if self.features is None else len(self.features)


def client_stream(seed: int, client_id: int) -> np.random.Generator:
    """The sampling stream owned by ``client_id`` under ``seed``."""
    return substream(seed, CLIENT_STREAM, client_id)


def dirichlet_partition(
    labels: np.ndarray | list[int],
    N: int,
    alpha: float,
    seed: int,
    max_retries: int = 100,
) -> list[np.ndarray]:
    """Split example indices across ``N`` clients, non-IID over labels.

    Each client draws a multinomial over labels from a symmetric
    Dirichlet(alpha); each example is then assigned to exactly one client with
    probability proportional to the clients' weights on its label.  Draws that
    leave any client empty are redrawn up to ``max_retries`` times.

    Returns one sorted index array per client; together they partition
    ``range(len(labels))``.
    """
    labels = np.asarray(labels)
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if labels.size == 0:
        raise ValueError("labels must be nonempty")
    if labels.size < N:
        raise PartitionError(f"cannot split {labels.size} examples across {N} clients")

    classes = np.unique(labels)
    rng = substream(seed, DATA_STREAM, 0xD1)
    for _ in range(max_retries):
        weights = rng.dirichlet([alpha] * len(classes), size=N)  # (N, K)
        assignment = np.empty(labels.size, dtype=np.int64)
        for k, cls in enumerate(classes):
            idx = np.flatnonzero(labels == cls)
            p = weights[:, k] / weights[:, k].sum()
            assignment[idx] = rng.choice(N, size=idx.size, p=p)
        parts = [np.sort(np.flatnonzero(assignment == i)) for i in range(N)]
        if all(part.size > 0 for part in parts):
            return parts
    raise PartitionError(
        f"no nonempty partition after {max_retries} draws "
        f"(alpha={alpha}, N={N}, examples={labels.size})"
    )


def next_minibatch(shard: ClientShard, B: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``B`` examples uniformly with replacement from the shard.

    With-replacement sampling keeps the minibatch gradient exactly unbiased.
    Advances the shard's private stream by one draw of ``B`` indices.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if shard.features is None:
        raise ValueError(f"client {shard.client_id} has no examples to sample")
    idx = shard.rng.integers(0, shard.n_examples, size=B)
    return shard.features[idx], shard.labels[idx]


def load_csv_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset CSV: header ``f0..f{k-1},label``, label a nonnegative int.

    Feature values are parsed as float64.  Returns ``(features, labels)``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        k = len(header) - 1
        expected = [f"f{i}" for i in range(k)] + ["label"]
        if header != expected:
            raise ValueError(
                f"{path}: bad header {header!r}, expected f0..f{k - 1},label"
            )
        features, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != k + 1:
                raise ValueError(f"{path}:{lineno}: expected {k + 1} columns")
            features.append([float(v) for v in row[:k]])
            lab = int(row[k])
            if lab < 0:
                raise ValueError(f"{path}:{lineno}: negative label {lab}")
            labels.append(lab)
    if not features:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(features, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def emit_partition_manifest(parts: list[np.ndarray], path: str | Path) -> None:
    """Write the partition as JSON ``{client_id: [example indices]}``."""
    manifest = {str(i): [int(j) for j in part] for i, part in enumerate(parts)}
    Path(path).write_text(json.dumps(manifest, indent=1) + "\n")
