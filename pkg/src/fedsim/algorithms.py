"""The federated round engine.

Three algorithms run under one harness:

* ``fedlion``   -- sign-momentum local steps; the client uploads an
  integer-valued update (the exact running sum of its sign steps, so
  integrality holds by construction rather than by float division) plus its
  final momentum; the server averages both.
* ``fedavg``    -- plain local SGD; the client uploads a full-precision model
  delta; the server averages models.
* ``mfl-sgdwm`` -- heavy-ball local SGD (``m <- beta1*m + g``); client uploads
  a full-precision delta and momentum; the server averages both.

Within a round, sampled clients are pure functions of the broadcast state and
their own shard, so they may run on any number of threads; aggregation uses a
fixed reduction order, which keeps results independent of parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codec import (
    DeltaVector,
    HistogramReport,
    PacketWriter,
    UplinkPacket,
    account_round,
    histogram_from_counts,
)
from .data import ClientShard
from .errors import ConfigError, NumericError
from .metrics import RoundRecord, estimate_alpha, gradient_density
from .models import save_checkpoint
from .rng import ROUND_STREAM, substream
from .vectors import ParamVector, lerp, mean_reduce, sign

ALGORITHMS = ("fedlion", "fedavg", "mfl-sgdwm")
SCHEDULES = ("fixed", "theorem1")


@dataclass(frozen=True)
class FederatedConfig:
    """Full hyperparameter set for one run.

    With ``schedule="theorem1"`` the learning rate and momentum coefficients
    are derived from the round budget (``gamma = 1/sqrt(T)``,
    ``beta1 = 1 - 1/sqrt(T)``, ``beta2 = 1 - 1/T``), overriding the fixed
    values.
    """

    algorithm: str
    T: int
    E: int = 5
    gamma: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    B: int = 32
    n: int = 1
    seed: int = 0
    schedule: str = "fixed"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule: unknown value {self.schedule!r}")
        if self.T < 1:
            raise ConfigError(f"T: must be >= 1, got {self.T}")
        if self.E < 1:
            raise ConfigError(f"E: must be >= 1, got {self.E}")
        if self.B < 1:
            raise ConfigError(f"B: must be >= 1, got {self.B}")
        if self.n < 1:
            raise ConfigError(f"n: must be >= 1, got {self.n}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {self.seed}")
        if self.schedule == "theorem1":
            rt = math.sqrt(self.T)
            object.__setattr__(self, "gamma", 1.0 / rt)
            object.__setattr__(self, "beta1", 1.0 - 1.0 / rt)
            object.__setattr__(self, "beta2", 1.0 - 1.0 / self.T)
        if not self.gamma > 0:
            raise ConfigError(f"gamma: must be > 0, got {self.gamma}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name}: must be in [0, 1), got {b}")


@dataclass(frozen=True)
class GlobalState:
    """Server-side model and momentum after ``round`` aggregations."""

    x: ParamVector
    m: ParamVector
    round: int = 0


@dataclass(frozen=True)
class ClientUpdate:
    """One client's upload for a round.

    ``delta`` carries the integer payload (fedlion); ``dense_delta`` the
    full-precision payload (fedavg / mfl-sgdwm).  ``probe_grad`` is the
    client's first-local-step minibatch gradient, kept for the lab's density
    probe; it is never transmitted.
    """

    client_id: int
    delta: DeltaVector | None
    dense_delta: ParamVector | None
    momentum: ParamVector | None
    probe_grad: ParamVector


def sample_clients(N: int, n: int, round_rng: np.random.Generator) -> list[int]:
    """Sample ``n`` distinct client ids uniformly without replacement."""
    if not 1 <= n <= N:
        raise ValueError(f"need 1 <= n <= N, got n={n} N={N}")
    return [int(i) for i in round_rng.choice(N, size=n, replace=False)]


def _client_grad(problem, shard, x, config, round_index, step):
    try:
        return problem.minibatch_grad(shard, x, config.B)
    except NumericError as err:
        raise NumericError(str(err), round_index, shard.client_id, step) from err


def fedlion_client_round(
    x_global: ParamVector,
    m_global: ParamVector,
    shard: ClientShard,
    problem,
    config: FederatedConfig,
    round_index: int = 0,
) -> ClientUpdate:
    """Run E sign-momentum steps; the integer update is the exact sum of signs."""
    x = x_global
    m = m_global
    delta = np.zeros(len(x_global), dtype=np.int64)
    probe = None
    for step in range(1, config.E + 1):
        g = _client_grad(problem, shard, x, config, round_index, step)
        if step == 1:
            probe = g
        h = sign(lerp(m, g, config.beta1))
        x = x - config.gamma * h
        m = lerp(m, g, config.beta2)
        delta += h.data.astype(np.int64)
    return ClientUpdate(
        client_id=shard.client_id,
        delta=DeltaVector(delta, config.E),
        dense_delta=None,
        momentum=m,
        probe_grad=probe,
    )


def fedavg_client_round(
    x_global: ParamVector,
    shard: ClientShard,
    problem,
    config: FederatedConfig,
    round_index: int = 0,
) -> ClientUpdate:
    """Run E plain SGD steps; upload the full-precision model delta."""
    x = x_global
    probe = None
    for step in range(1, config.E + 1):
        g = _client_grad(problem, shard, x, config, round_index, step)
        if step == 1:
            probe = g
        x = x - config.gamma * g
    return ClientUpdate(
        client_id=shard.client_id,
        delta=None,
        dense_delta=x_global - x,
        momentum=None,
        probe_grad=probe,
    )


def mfl_client_round(
    x_global: ParamVector,
    m_global: ParamVector,
    shard: ClientShard,
    problem,
    config: FederatedConfig,
    round_index: int = 0,
) -> ClientUpdate:
    """Run E heavy-ball steps; upload full-precision delta and momentum."""
    x = x_global
    m = m_global
    probe = None
    for step in range(1, config.E + 1):
        g = _client_grad(problem, shard, x, config, round_index, step)
        if step == 1:
            probe = g
        m = ParamVector(config.beta1 * m.data + g.data)
        x = x - config.gamma * m
    return ClientUpdate(
        client_id=shard.client_id,
        delta=None,
        dense_delta=x_global - x,
        momentum=m,
        probe_grad=probe,
    )


def fedlion_server_step(
    state: GlobalState, updates: list[ClientUpdate], config: FederatedConfig
) -> GlobalState:
    """Apply ``x <- x - (gamma/n) * sum(delta)`` and average client momenta."""
    if not updates:
        raise ValueError("server step with no updates")
    total = np.zeros(len(state.x), dtype=np.int64)
    for u in updates:
        if u.delta is None or u.delta.d != len(state.x):
            raise ValueError(f"client {u.client_id}: bad or missing integer delta")
        total += u.delta.values
    x = ParamVector(state.x.data - (config.gamma / len(updates)) * total)
    m = mean_reduce([u.momentum for u in updates])
    return GlobalState(x=x, m=m, round=state.round + 1)


def _dense_server_step(
    state: GlobalState, updates: list[ClientUpdate], config: FederatedConfig
) -> GlobalState:
    if not updates:
        raise ValueError("server step with no updates")
    x = state.x - mean_reduce([u.dense_delta for u in updates])
    if config.algorithm == "mfl-sgdwm":
        m = mean_reduce([u.momentum for u in updates])
    else:
        m = state.m
    return GlobalState(x=x, m=m, round=state.round + 1)


def server_step(
    state: GlobalState, updates: list[ClientUpdate], config: FederatedConfig
) -> GlobalState:
    if config.algorithm == "fedlion":
        return fedlion_server_step(state, updates, config)
    return _dense_server_step(state, updates, config)


@dataclass
class RunResult:
    records: list[RoundRecord]
    final_state: GlobalState
    histogram: HistogramReport | None
    # worst per-packet float32 momentum narrowing when capture was enabled
    max_momentum_narrowing: float | None = None


def run_federation(
    problem,
    shards: list[ClientShard],
    config: FederatedConfig,
    threads: int = 1,
    capture_path=None,
    checkpoint_path=None,
) -> RunResult:
    """Run T federated rounds; fully deterministic given ``config.seed``.

    ``threads`` only affects speed: client results are gathered and reduced in
    sampled order.  ``capture_path`` (fedlion only) records every uplink
    packet; ``checkpoint_path`` writes the final model.
    """
    N = len(shards)
    if config.n > N:
        raise ValueError(f"config.n={config.n} exceeds client count N={N}")
    if problem.spec.N != N:
        raise ValueError(f"problem declares N={problem.spec.N} but got {N} shards")
    if capture_path is not None and config.algorithm != "fedlion":
        raise ValueError("packet capture is only defined for fedlion")

    d = problem.spec.d
    state = GlobalState(x=problem.init_params(), m=ParamVector.zeros(d))
    account = account_round(config.algorithm, d, config.E, config.n)
    uplink_bits = config.n * account.uplink_bits_per_client
    downlink_bits = config.n * account.downlink_bits_per_client
    hist_counts = np.zeros(2 * config.E + 1, dtype=np.int64)
    writer = PacketWriter(capture_path) if capture_path is not None else None
    threshold = float(config.n) ** 0.25
    quadratic = problem.spec.kind == "synthetic-quadratic"

    def client_task(cid: int, t: int) -> ClientUpdate:
        shard = shards[cid]
        if config.algorithm == "fedlion":
            return fedlion_client_round(state.x, state.m, shard, problem, config, t)
        if config.algorithm == "fedavg":
            return fedavg_client_round(state.x, shard, problem, config, t)
        return mfl_client_round(state.x, state.m, shard, problem, config, t)

    records: list[RoundRecord] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(1, config.T + 1):
            ids = sample_clients(N, config.n, substream(config.seed, ROUND_STREAM, t))
            if pool is not None:
                updates = list(pool.map(lambda cid: client_task(cid, t), ids))
            else:
                updates = [client_task(cid, t) for cid in ids]

            if config.algorithm == "fedlion":
                for u in updates:
                    hist_counts += np.bincount(
                        u.delta.values + config.E, minlength=2 * config.E + 1
                    )
                    if writer is not None:
                        writer.add(UplinkPacket(t, u.client_id, u.delta, u.momentum))

            state = server_step(state, updates, config)

            probe_mean = mean_reduce([u.probe_grad for u in updates])
            density = gradient_density(probe_mean, config.n)
            global_grad = problem.global_gradient(state.x)
            alpha = None
            if quadratic:
                report = estimate_alpha(problem, shards, state.x)
                alpha = report.alpha_hat if report is not None else None
            records.append(
                RoundRecord(
                    round=t,
                    train_loss=problem.global_loss(state.x),
                    grad_l1=float(np.sum(np.abs(global_grad.data))),
                    grad_l2=float(np.sqrt(np.sum(global_grad.data**2))),
                    density=density.density if density is not None else None,
                    density_threshold=threshold,
                    alpha_hat=alpha,
                    uplink_bits=uplink_bits,
                    downlink_bits=downlink_bits,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()
        if writer is not None:
            writer.close()

    histogram = None
    if config.algorithm == "fedlion":
        histogram = histogram_from_counts(hist_counts, config.E)
    if checkpoint_path is not None:
        header = problem.checkpoint_header()
        save_checkpoint(checkpoint_path, header, state.x)
    return RunResult(
        records=records,
        final_state=state,
        histogram=histogram,
        max_momentum_narrowing=writer.max_narrowing_error if writer is not None else None,
    )
