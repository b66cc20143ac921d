"""Concrete federated objectives: the quadratic testbed and dataset problems.

A problem bundles the global objective of one federation with per-client
evaluation: exact local/global losses and gradients plus the stochastic
minibatch gradient used during training.  Global quantities follow the
unweighted client average ``f = (1/N) sum_i f_i`` (each client's objective is
the mean over its own examples), accumulated in fixed client order.
"""

from __future__ import annotations

import numpy as np

from . import models
from .data import ClientShard, ProblemSpec, client_stream, dirichlet_partition, next_minibatch
from .errors import NumericError
from .rng import DATA_STREAM, EVAL_STREAM, INIT_STREAM, substream
from .vectors import ParamVector

EVAL_SUBSAMPLE_THRESHOLD = 100_000
EVAL_SUBSAMPLE_SIZE = 4096


class QuadraticProblem:
    """Per-client objectives ``f_i(x) = 0.5 (x - c_i)' A (x - c_i)``.

    The diagonal curvature ``A`` is shared; the client optima ``c_i`` spread
    around a common base point proportionally to ``heterogeneity`` with their
    mean pinned to the base, so the global optimum, its value and the
    per-coordinate smoothness constants are all exact.  Stochastic gradients
    add zero-mean Gaussian noise of scale ``noise_scale / d`` per coordinate.
    """

    def __init__(
        self,
        d: int,
        N: int,
        heterogeneity: float,
        seed: int,
        noise_scale: float = 1.0,
        init_spread: float = 1.0,
    ):
        if d < 1 or N < 1:
            raise ValueError(f"d and N must be >= 1, got d={d} N={N}")
        if heterogeneity < 0:
            raise ValueError(f"heterogeneity must be >= 0, got {heterogeneity}")
        if noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
        rng = substream(seed, DATA_STREAM)
        self.curvature = rng.uniform(0.5, 2.0, size=d)
        base = rng.standard_normal(d)
        offsets = rng.standard_normal((N, d))
        offsets -= offsets.mean(axis=0)
        self.centers = base + heterogeneity * offsets
        self.mean_center = base
        self.seed = seed
        self.init_spread = float(init_spread)
        self.noise_sigma = noise_scale / d
        spread = self.centers - self.mean_center
        f_star = float(0.5 * np.mean((spread**2 * self.curvature).sum(axis=1)))
        self.spec = ProblemSpec(
            kind="synthetic-quadratic",
            d=d,
            N=N,
            known_optimum_value=f_star,
            smoothness_bound=float(self.curvature.sum()),
            noise_scale=float(noise_scale),
        )

    def init_params(self) -> ParamVector:
        rng = substream(self.seed, INIT_STREAM)
        return ParamVector(self.mean_center + self.init_spread * rng.standard_normal(self.spec.d))

    def local_loss(self, shard: ClientShard, x: ParamVector) -> float:
        r = x.data - shard.center
        return float(0.5 * np.sum(self.curvature * r * r))

    def local_gradient(self, shard: ClientShard, x: ParamVector) -> ParamVector:
        return ParamVector(self.curvature * (x.data - shard.center))

    def minibatch_grad(self, shard: ClientShard, x: ParamVector, B: int) -> ParamVector:
        exact = self.curvature * (x.data - shard.center)
        noise = self.noise_sigma * shard.rng.standard_normal(self.spec.d)
        return ParamVector(exact + noise)

    def global_loss(self, x: ParamVector) -> float:
        r = x.data - self.mean_center
        return float(0.5 * np.sum(self.curvature * r * r)) + self.spec.known_optimum_value

    def global_gradient(self, x: ParamVector) -> ParamVector:
        return ParamVector(self.curvature * (x.data - self.mean_center))

    def checkpoint_header(self) -> dict:
        return {"arch": {"kind": "quadratic"}, "seed": self.seed}


class DatasetProblem:
    """A model trained on a labelled dataset split across clients."""

    def __init__(
        self,
        kind: str,
        arch: models.ModelArch,
        features: np.ndarray,
        labels: np.ndarray,
        parts: list[np.ndarray],
        seed: int,
    ):
        self.arch = arch
        self.features = features
        self.labels = labels
        self.parts = parts
        self.seed = seed
        self.spec = ProblemSpec(kind=kind, d=arch.d, N=len(parts))
        # Exact global evaluation is affordable at desk scale; huge datasets
        # fall back to one fixed, seeded evaluation subsample of the pool.
        if len(features) >= EVAL_SUBSAMPLE_THRESHOLD:
            rng = substream(seed, EVAL_STREAM)
            idx = rng.choice(len(features), size=EVAL_SUBSAMPLE_SIZE, replace=False)
            self._eval_sets = [(features[idx], labels[idx])]
        else:
            self._eval_sets = [(features[p], labels[p]) for p in parts]

    def init_params(self) -> ParamVector:
        return models.init_params(self.arch, substream(self.seed, INIT_STREAM))

    def local_loss(self, shard: ClientShard, x: ParamVector) -> float:
        return models.loss(self.arch, x, (shard.features, shard.labels))

    def local_gradient(self, shard: ClientShard, x: ParamVector) -> ParamVector:
        return models.grad(self.arch, x, (shard.features, shard.labels))

    def minibatch_grad(self, shard: ClientShard, x: ParamVector, B: int) -> ParamVector:
        batch = next_minibatch(shard, B)
        g = models.grad(self.arch, x, batch)
        if not np.all(np.isfinite(g.data)):  # pragma: no cover - guarded upstream
            raise NumericError("non-finite minibatch gradient")
        return g

    def global_loss(self, x: ParamVector) -> float:
        total = 0.0
        for batch in self._eval_sets:
            total += models.loss(self.arch, x, batch)
        return total / len(self._eval_sets)

    def global_gradient(self, x: ParamVector) -> ParamVector:
        acc = np.zeros(self.arch.d)
        for batch in self._eval_sets:
            acc += models.grad(self.arch, x, batch).data
        return ParamVector(acc / len(self._eval_sets))

    def checkpoint_header(self) -> dict:
        return {"arch": self.arch.header(), "seed": self.seed}


def make_quadratic_federation(
    d: int,
    N: int,
    heterogeneity: float,
    seed: int,
    noise_scale: float = 1.0,
    init_spread: float = 1.0,
) -> tuple[QuadraticProblem, list[ClientShard]]:
    """Build the controlled quadratic testbed and its client shards."""
    problem = QuadraticProblem(d, N, heterogeneity, seed, noise_scale, init_spread)
    shards = [
        ClientShard(client_id=i, rng=client_stream(seed, i), center=problem.centers[i])
        for i in range(N)
    ]
    return problem, shards


def make_classification_federation(
    N: int,
    seed: int,
    model: str = "mlp",
    num_classes: int = 10,
    input_dim: int = 20,
    hidden_dim: int = 16,
    examples_per_client: int = 100,
    partition_alpha: float = 1.0,
    class_sep: float = 2.0,
) -> tuple[DatasetProblem, list[ClientShard]]:
    """Gaussian-blob classification data, split non-IID via Dirichlet.

    ``model`` selects the trained architecture: ``"mlp"`` (one tanh hidden
    layer) or ``"logistic"`` (softmax regression).
    """
    if model not in ("mlp", "logistic"):
        raise ValueError(f"model must be 'mlp' or 'logistic', got {model!r}")
    rng = substream(seed, DATA_STREAM)
    means = class_sep * rng.standard_normal((num_classes, input_dim))
    total = N * examples_per_client
    labels = rng.integers(0, num_classes, size=total)
    features = means[labels] + rng.standard_normal((total, input_dim))
    parts = dirichlet_partition(labels, N, partition_alpha, seed)
    if model == "mlp":
        arch = models.ModelArch("mlp", input_dim, num_classes, hidden_dim)
        kind = "mlp-classification"
    else:
        arch = models.ModelArch("logistic", input_dim, num_classes)
        kind = "synthetic-logistic"
    problem = DatasetProblem(kind, arch, features, labels, parts, seed)
    shards = _shards_from_parts(features, labels, parts, seed)
    return problem, shards


def make_csv_federation(
    features: np.ndarray,
    labels: np.ndarray,
    N: int,
    seed: int,
    model: str = "logistic",
    hidden_dim: int = 16,
    partition_alpha: float = 1.0,
) -> tuple[DatasetProblem, list[ClientShard]]:
    """Federate an ingested CSV dataset (see :func:`fedsim.data.load_csv_dataset`)."""
    num_classes = int(labels.max()) + 1
    input_dim = features.shape[1]
    if model == "mlp":
        arch = models.ModelArch("mlp", input_dim, num_classes, hidden_dim)
    elif model == "logistic":
        arch = models.ModelArch("logistic", input_dim, num_classes)
    else:
        raise ValueError(f"model must be 'mlp' or 'logistic', got {model!r}")
    parts = dirichlet_partition(labels, N, partition_alpha, seed)
    problem = DatasetProblem("external-csv", arch, features, labels, parts, seed)
    shards = _shards_from_parts(features, labels, parts, seed)
    return problem, shards


def _shards_from_parts(features, labels, parts, seed) -> list[ClientShard]:
    return [
        ClientShard(
            client_id=i,
            rng=client_stream(seed, i),
            features=features[part],
            labels=labels[part],
        )
        for i, part in enumerate(parts)
    ]
