import numpy as np
import pytest

from fedsim.algorithms import (
    ClientUpdate,
    FederatedConfig,
    GlobalState,
    fedavg_client_round,
    fedlion_client_round,
    fedlion_server_step,
    mfl_client_round,
    run_federation,
    sample_clients,
    server_step,
)
from fedsim.codec import DeltaVector
from fedsim.data import ClientShard, ProblemSpec, client_stream
from fedsim.errors import ConfigError, NumericError
from fedsim.metrics import emit_metrics
from fedsim.problems import make_quadratic_federation
from fedsim.rng import ROUND_STREAM, substream
from fedsim.vectors import ParamVector

# Integer update of the seed-11 quadratic client round with E=3 (frozen after
# the straight-line transcription below agreed with the engine).
PINNED_E3_DELTA = [-3, -3, -3, 3]


class StubProblem:
    """Feeds a preset gradient sequence to the client-round functions."""

    def __init__(self, grads):
        self._grads = [ParamVector(g) for g in grads]
        self._i = 0
        self.spec = ProblemSpec(kind="mlp-classification", d=len(self._grads[0]), N=1)

    def minibatch_grad(self, shard, x, B):
        g = self._grads[self._i % len(self._grads)]
        self._i += 1
        return g


class FailingProblem:
    def __init__(self, fail_at):
        self.fail_at = fail_at
        self.calls = 0
        self.spec = ProblemSpec(kind="mlp-classification", d=2, N=1)

    def minibatch_grad(self, shard, x, B):
        self.calls += 1
        if self.calls >= self.fail_at:
            raise NumericError("non-finite minibatch gradient")
        return ParamVector([1.0, -1.0])


def stub_shard(d, client_id=0, seed=0):
    return ClientShard(client_id=client_id, rng=client_stream(seed, client_id), center=np.zeros(d))


def lion_reference(problem, shard, x0, m0, config, rounds):
    """Straight-line transcription of the sign-momentum loop.

    Keeps its own float trajectory and recovers each round's integer update by
    floating-point subtraction, the way the update is defined rather than the
    way the engine accumulates it.
    """
    x = np.array(x0.data)
    m = np.array(m0.data)
    deltas = []
    for _ in range(rounds):
        x_start = x.copy()
        for _ in range(config.E):
            g = problem.minibatch_grad(shard, ParamVector(x), config.B).data
            h = np.sign(config.beta1 * m + (1 - config.beta1) * g)
            x = x - config.gamma * h
            m = config.beta2 * m + (1 - config.beta2) * g
        raw = (x_start - x) / config.gamma
        assert np.max(np.abs(raw - np.rint(raw))) < 1e-6, "update drifted off-integer"
        deltas.append(np.rint(raw).astype(np.int64))
    return deltas, x, m


# -- configuration -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="fedlion", T=0)
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="sgd", T=1)
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="fedavg", T=1, beta1=1.0)
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="fedavg", T=1, gamma=0.0)
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="fedavg", T=1, n=0)
    with pytest.raises(ConfigError):
        FederatedConfig(algorithm="fedavg", T=1, schedule="warmup")


def test_theorem_schedule_overrides():
    cfg = FederatedConfig(algorithm="fedlion", T=400, gamma=0.123, beta1=0.5, beta2=0.5,
                          schedule="theorem1")
    assert cfg.gamma == 1.0 / 20.0
    assert cfg.beta1 == 1.0 - 1.0 / 20.0
    assert cfg.beta2 == 1.0 - 1.0 / 400.0


# -- client sampling -----------------------------------------------------------

def test_sample_clients_full_participation():
    ids = sample_clients(7, 7, substream(0, ROUND_STREAM, 1))
    assert sorted(ids) == list(range(7))


def test_sample_clients_single():
    assert sample_clients(1, 1, substream(0, ROUND_STREAM, 1)) == [0]


def test_sample_clients_rejects_oversubscription():
    with pytest.raises(ValueError):
        sample_clients(3, 4, substream(0, ROUND_STREAM, 1))


def test_sample_clients_uniformity():
    # frequency of each id over 10^4 rounds within 5 sigma of n/N = 0.3
    counts = np.zeros(10)
    for t in range(10_000):
        for cid in sample_clients(10, 3, substream(5, ROUND_STREAM, t)):
            counts[cid] += 1
    freq = counts / 10_000
    sigma = np.sqrt(0.3 * 0.7 / 10_000)
    assert np.all(np.abs(freq - 0.3) < 5 * sigma)


# -- fedlion client round ------------------------------------------------------

def test_fedlion_single_step_zero_momentum():
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=1, beta1=0.9, beta2=0.99, n=1)
    problem = StubProblem([[2.0, -3.0, 0.0]])
    upd = fedlion_client_round(
        ParamVector.zeros(3), ParamVector.zeros(3), stub_shard(3), problem, cfg
    )
    assert upd.delta.values.tolist() == [1, -1, 0]
    expected_m = (1.0 - 0.99) * np.array([2.0, -3.0, 0.0])
    assert np.array_equal(upd.momentum.data, expected_m)


def test_fedlion_delta_is_gamma_free():
    # identical shard streams, E=1: the update is a sum of signs, so the
    # learning rate cannot change it
    deltas = []
    for gamma in (0.001, 0.002, 0.5):
        problem, shards = make_quadratic_federation(d=6, N=2, heterogeneity=0.5, seed=3)
        cfg = FederatedConfig(algorithm="fedlion", T=1, E=1, gamma=gamma, n=1)
        x0 = problem.init_params()
        upd = fedlion_client_round(x0, ParamVector.zeros(6), shards[0], problem, cfg)
        deltas.append(upd.delta.values)
    assert np.array_equal(deltas[0], deltas[1])
    assert np.array_equal(deltas[0], deltas[2])


def test_fedlion_e3_pinned_against_transcription():
    cfg = FederatedConfig(
        algorithm="fedlion", T=1, E=3, gamma=0.001, beta1=0.9, beta2=0.99, B=4, n=1, seed=11
    )
    problem, shards = make_quadratic_federation(d=4, N=2, heterogeneity=0.5, seed=11)
    x0 = problem.init_params()
    upd = fedlion_client_round(x0, ParamVector.zeros(4), shards[0], problem, cfg, round_index=1)

    oracle_problem, oracle_shards = make_quadratic_federation(d=4, N=2, heterogeneity=0.5, seed=11)
    deltas, _, m = lion_reference(
        oracle_problem, oracle_shards[0], x0, ParamVector.zeros(4), cfg, rounds=1
    )
    assert upd.delta.values.tolist() == PINNED_E3_DELTA
    assert np.array_equal(upd.delta.values, deltas[0])
    assert np.max(np.abs(upd.momentum.data - m)) < 1e-12


def test_fedlion_sign_sgd_degeneration():
    # beta1 = beta2 = 0, E = 1: the step direction is exactly sign(g)
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=1, beta1=0.0, beta2=0.0, n=1)
    g = [0.3, -0.7, 0.0, 12.0]
    upd = fedlion_client_round(
        ParamVector.zeros(4), ParamVector.zeros(4), stub_shard(4), StubProblem([g]), cfg
    )
    assert upd.delta.values.tolist() == np.sign(g).tolist()
    assert np.array_equal(upd.momentum.data, np.array(g))


def test_fedlion_integrality_bound():
    problem, shards = make_quadratic_federation(d=10, N=3, heterogeneity=1.0, seed=19,
                                                noise_scale=20.0)
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=7, n=1, seed=19)
    upd = fedlion_client_round(problem.init_params(), ParamVector.zeros(10), shards[1],
                               problem, cfg)
    assert np.issubdtype(upd.delta.values.dtype, np.integer)
    assert np.all(np.abs(upd.delta.values) <= 7)


# -- server steps --------------------------------------------------------------

def _mk_update(delta, E, momentum, cid=0):
    return ClientUpdate(
        client_id=cid,
        delta=DeltaVector(np.array(delta), E),
        dense_delta=None,
        momentum=ParamVector(momentum),
        probe_grad=ParamVector(momentum),
    )


def test_server_single_client_inverts_exactly():
    # n=1: the server's x - gamma*delta must reproduce the client's local model
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=4, gamma=0.01, n=1, seed=23)
    problem, shards = make_quadratic_federation(d=5, N=1, heterogeneity=0.0, seed=23)
    x0 = problem.init_params()
    upd = fedlion_client_round(x0, ParamVector.zeros(5), shards[0], problem, cfg)

    oracle_problem, oracle_shards = make_quadratic_federation(d=5, N=1, heterogeneity=0.0, seed=23)
    _, x_local, _ = lion_reference(
        oracle_problem, oracle_shards[0], x0, ParamVector.zeros(5), cfg, rounds=1
    )
    state = fedlion_server_step(GlobalState(x=x0, m=ParamVector.zeros(5)), [upd], cfg)
    assert np.max(np.abs(state.x.data - x_local)) < 1e-12
    assert state.round == 1


def test_server_two_client_arithmetic():
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=3, gamma=0.001, n=2)
    state = GlobalState(x=ParamVector.zeros(2), m=ParamVector.zeros(2))
    updates = [
        _mk_update([1, -1], 3, [0.0, 0.0], cid=0),
        _mk_update([3, 1], 3, [0.0, 0.0], cid=1),
    ]
    out = fedlion_server_step(state, updates, cfg)
    assert out.x.data == pytest.approx([-0.002, 0.0], abs=1e-18)


def test_server_opposite_deltas_cancel():
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=2, gamma=0.05, n=2)
    x = ParamVector([1.0, -2.0, 3.0])
    state = GlobalState(x=x, m=ParamVector.zeros(3))
    updates = [
        _mk_update([2, -1, 0], 2, [0.0, 0.0, 0.0], cid=0),
        _mk_update([-2, 1, 0], 2, [0.0, 0.0, 0.0], cid=1),
    ]
    out = fedlion_server_step(state, updates, cfg)
    assert np.array_equal(out.x.data, x.data)


def test_server_rejects_empty():
    cfg = FederatedConfig(algorithm="fedlion", T=1)
    state = GlobalState(x=ParamVector.zeros(2), m=ParamVector.zeros(2))
    with pytest.raises(ValueError):
        fedlion_server_step(state, [], cfg)
    with pytest.raises(ValueError):
        server_step(state, [], FederatedConfig(algorithm="fedavg", T=1))


def test_server_momentum_is_plain_mean():
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=1, n=2)
    state = GlobalState(x=ParamVector.zeros(2), m=ParamVector.zeros(2))
    updates = [
        _mk_update([0, 0], 1, [1.0, -1.0], cid=0),
        _mk_update([0, 0], 1, [3.0, 1.0], cid=1),
    ]
    out = fedlion_server_step(state, updates, cfg)
    assert out.m.data.tolist() == [2.0, 0.0]


# -- fedavg / mfl client rounds ------------------------------------------------

def test_fedavg_single_step_exact():
    cfg = FederatedConfig(algorithm="fedavg", T=1, E=1, gamma=0.01, n=1)
    g = np.array([0.5, -1.5])
    upd = fedavg_client_round(ParamVector.zeros(2), stub_shard(2), StubProblem([g]), cfg)
    assert np.array_equal(upd.dense_delta.data, cfg.gamma * g)


def test_fedavg_zero_gradients():
    cfg = FederatedConfig(algorithm="fedavg", T=1, E=5, n=1)
    upd = fedavg_client_round(
        ParamVector([1.0, 2.0]), stub_shard(2), StubProblem([[0.0, 0.0]]), cfg
    )
    assert upd.dense_delta.data.tolist() == [0.0, 0.0]


def test_fedavg_quadratic_closed_form_contraction():
    # exact gradients: x_s - c = (1 - gamma*A) * (x_{s-1} - c), so the upload
    # equals (1 - (1 - gamma*A)^E) * (x0 - c)
    cfg = FederatedConfig(algorithm="fedavg", T=1, E=6, gamma=0.05, n=1, seed=31)
    problem, shards = make_quadratic_federation(
        d=5, N=2, heterogeneity=0.4, seed=31, noise_scale=0.0
    )
    x0 = problem.init_params()
    upd = fedavg_client_round(x0, shards[0], problem, cfg)
    contraction = (1.0 - cfg.gamma * problem.curvature) ** cfg.E
    expected = (1.0 - contraction) * (x0.data - shards[0].center)
    assert np.max(np.abs(upd.dense_delta.data - expected)) < 1e-12


def test_mfl_beta_zero_equals_fedavg():
    cfg_avg = FederatedConfig(algorithm="fedavg", T=1, E=4, gamma=0.02, n=1, seed=37)
    cfg_mfl = FederatedConfig(algorithm="mfl-sgdwm", T=1, E=4, gamma=0.02, beta1=0.0, n=1, seed=37)
    pa, sa = make_quadratic_federation(d=6, N=2, heterogeneity=0.3, seed=37)
    pm, sm = make_quadratic_federation(d=6, N=2, heterogeneity=0.3, seed=37)
    x0 = pa.init_params()
    ua = fedavg_client_round(x0, sa[0], pa, cfg_avg)
    um = mfl_client_round(x0, ParamVector.zeros(6), sm[0], pm, cfg_mfl)
    assert np.array_equal(ua.dense_delta.data, um.dense_delta.data)


def test_mfl_zero_gradients_zero_delta():
    cfg = FederatedConfig(algorithm="mfl-sgdwm", T=1, E=3, n=1)
    upd = mfl_client_round(
        ParamVector([1.0, -1.0]), ParamVector.zeros(2), stub_shard(2),
        StubProblem([[0.0, 0.0]]), cfg,
    )
    assert upd.dense_delta.data.tolist() == [0.0, 0.0]
    assert upd.momentum.data.tolist() == [0.0, 0.0]


def test_mfl_two_step_unroll():
    cfg = FederatedConfig(algorithm="mfl-sgdwm", T=1, E=2, gamma=0.1, beta1=0.9, n=1, seed=41)
    problem, shards = make_quadratic_federation(
        d=4, N=2, heterogeneity=0.2, seed=41, noise_scale=0.0
    )
    x0 = problem.init_params()
    upd = mfl_client_round(x0, ParamVector.zeros(4), shards[0], problem, cfg)
    # hand-unrolled two-step heavy-ball recursion
    c, A = shards[0].center, problem.curvature
    g1 = A * (x0.data - c)
    m1 = g1
    x1 = x0.data - cfg.gamma * m1
    g2 = A * (x1 - c)
    m2 = cfg.beta1 * m1 + g2
    x2 = x1 - cfg.gamma * m2
    assert np.max(np.abs(upd.dense_delta.data - (x0.data - x2))) < 1e-15
    assert np.max(np.abs(upd.momentum.data - m2)) < 1e-15


# -- run_federation ------------------------------------------------------------

def test_single_client_matches_centralized_lion():
    # N = n = 1: periodic averaging degenerates to plain sign-momentum descent
    cfg = FederatedConfig(
        algorithm="fedlion", T=20, E=2, gamma=0.01, beta1=0.9, beta2=0.99, n=1, seed=47
    )
    problem, shards = make_quadratic_federation(d=6, N=1, heterogeneity=0.0, seed=47)
    state = GlobalState(x=problem.init_params(), m=ParamVector.zeros(6))
    oracle_problem, oracle_shards = make_quadratic_federation(d=6, N=1, heterogeneity=0.0, seed=47)
    ref_deltas, ref_x, ref_m = lion_reference(
        oracle_problem, oracle_shards[0], state.x, state.m, cfg, rounds=cfg.T
    )
    for t in range(1, cfg.T + 1):
        assert sample_clients(1, 1, substream(cfg.seed, ROUND_STREAM, t)) == [0]
        upd = fedlion_client_round(state.x, state.m, shards[0], problem, cfg, t)
        assert np.array_equal(upd.delta.values, ref_deltas[t - 1])
        state = fedlion_server_step(state, [upd], cfg)
    assert np.max(np.abs(state.x.data - ref_x)) < 1e-12
    assert np.max(np.abs(state.m.data - ref_m)) < 1e-12

    # run_federation composes exactly these calls
    problem2, shards2 = make_quadratic_federation(d=6, N=1, heterogeneity=0.0, seed=47)
    result = run_federation(problem2, shards2, cfg)
    assert np.array_equal(result.final_state.x.data, state.x.data)
    assert np.array_equal(result.final_state.m.data, state.m.data)


def test_run_federation_deterministic_across_threads(tmp_path):
    def run(threads):
        problem, shards = make_quadratic_federation(d=8, N=6, heterogeneity=0.5, seed=53)
        cfg = FederatedConfig(algorithm="fedlion", T=8, E=2, n=3, seed=53)
        result = run_federation(problem, shards, cfg, threads=threads)
        path = tmp_path / f"threads{threads}.csv"
        emit_metrics(result.records, path)
        return path.read_bytes()

    assert run(1) == run(8)


def test_run_federation_histogram_conservation():
    problem, shards = make_quadratic_federation(d=8, N=4, heterogeneity=0.5, seed=59)
    cfg = FederatedConfig(algorithm="fedlion", T=6, E=3, n=2, seed=59)
    result = run_federation(problem, shards, cfg)
    assert result.histogram.counts.sum() == 8 * 6 * 2
    assert result.histogram.E == 3
    assert result.max_momentum_narrowing is None  # no capture requested


def test_run_federation_reports_wire_narrowing(tmp_path):
    problem, shards = make_quadratic_federation(d=8, N=4, heterogeneity=0.5, seed=59)
    cfg = FederatedConfig(algorithm="fedlion", T=3, E=2, n=2, seed=59)
    result = run_federation(problem, shards, cfg, capture_path=tmp_path / "c.packets")
    assert 0.0 < result.max_momentum_narrowing < 1e-6


def test_run_federation_round_records_well_formed():
    problem, shards = make_quadratic_federation(d=8, N=4, heterogeneity=0.5, seed=61)
    cfg = FederatedConfig(algorithm="fedlion", T=5, E=2, n=2, seed=61)
    result = run_federation(problem, shards, cfg)
    assert [r.round for r in result.records] == [1, 2, 3, 4, 5]
    for r in result.records:
        assert r.grad_l2 <= r.grad_l1 + 1e-12
        if r.density is not None:
            assert 1.0 - 1e-12 <= r.density <= np.sqrt(8) + 1e-12
        assert r.alpha_hat is not None  # exact-gradient problem
        assert r.wall_ms == 0.0


def test_run_federation_rejects_mismatches():
    problem, shards = make_quadratic_federation(d=4, N=2, heterogeneity=0.0, seed=67)
    with pytest.raises(ValueError):
        run_federation(problem, shards, FederatedConfig(algorithm="fedlion", T=1, n=3, seed=67))
    with pytest.raises(ValueError):
        run_federation(problem, shards[:1], FederatedConfig(algorithm="fedlion", T=1, n=1))
    with pytest.raises(ValueError):
        run_federation(
            problem, shards, FederatedConfig(algorithm="fedavg", T=1, n=1),
            capture_path="x.packets",
        )


def test_client_error_carries_context():
    cfg = FederatedConfig(algorithm="fedlion", T=1, E=3, n=1)
    problem = FailingProblem(fail_at=2)
    with pytest.raises(NumericError) as err:
        fedlion_client_round(
            ParamVector.zeros(2), ParamVector.zeros(2), stub_shard(2, client_id=4),
            problem, cfg, round_index=7,
        )
    assert err.value.round_index == 7
    assert err.value.client_id == 4
    assert err.value.step == 2
