import numpy as np
import pytest

from fedsim.metrics import (
    RoundRecord,
    emit_metrics,
    estimate_alpha,
    fit_rate,
    gradient_density,
    read_metrics,
)
from fedsim.problems import make_quadratic_federation
from fedsim.vectors import ParamVector

# Heterogeneity at x0 of the d=3, N=5, heterogeneity=0.5, seed=21 federation,
# frozen from the closed-form gradient computation (test below recomputes it).
PINNED_ALPHA_HET05 = 1.0876144326130213


def make_record(t, grad_l1=1.0, **kw):
    defaults = dict(
        round=t,
        train_loss=1.0,
        grad_l1=grad_l1,
        grad_l2=grad_l1 / 2,
        density=2.0,
        density_threshold=1.5,
        alpha_hat=None,
        uplink_bits=100,
        downlink_bits=200,
        wall_ms=0.0,
    )
    defaults.update(kw)
    return RoundRecord(**defaults)


# -- gradient density ----------------------------------------------------------

def test_density_constant_vector_is_dense():
    rep = gradient_density(ParamVector(np.full(100, 0.3)), n=10)
    assert rep.density == pytest.approx(10.0)
    assert rep.threshold == pytest.approx(10**0.25)
    assert rep.dense


def test_density_one_hot_never_dense():
    rep = gradient_density(ParamVector([0.0, 5.0, 0.0]), n=1)
    assert rep.density == pytest.approx(1.0)
    assert not rep.dense


def test_density_zero_vector_absent():
    assert gradient_density(ParamVector.zeros(4), n=3) is None


def test_density_range_invariant():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(1, 30))
        rep = gradient_density(ParamVector(rng.standard_normal(d)), n=5)
        assert 1.0 - 1e-12 <= rep.density <= np.sqrt(d) + 1e-12


# -- heterogeneity -------------------------------------------------------------

def test_alpha_zero_on_homogeneous():
    problem, shards = make_quadratic_federation(d=6, N=4, heterogeneity=0.0, seed=1)
    rep = estimate_alpha(problem, shards, problem.init_params())
    assert rep.alpha_hat == 0.0
    assert rep.per_client_ratios == [0.0] * 4
    assert not rep.exceeds_regime


def test_alpha_zero_single_client():
    problem, shards = make_quadratic_federation(d=3, N=1, heterogeneity=2.0, seed=2)
    rep = estimate_alpha(problem, shards, problem.init_params())
    assert rep.alpha_hat == 0.0


def test_alpha_pinned_closed_form():
    problem, shards = make_quadratic_federation(d=3, N=5, heterogeneity=0.5, seed=21)
    x0 = problem.init_params()
    rep = estimate_alpha(problem, shards, x0)
    # closed form: grad_i = A(x - c_i), global = A(x - mean_center)
    ratios = [
        np.abs(problem.curvature * (shards[i].center - problem.mean_center)).sum()
        / np.abs(problem.curvature * (x0.data - problem.mean_center)).sum()
        for i in range(5)
    ]
    assert rep.alpha_hat == pytest.approx(max(ratios), abs=1e-12)
    assert rep.alpha_hat == pytest.approx(PINNED_ALPHA_HET05, abs=1e-12)
    assert rep.exceeds_regime


def test_alpha_absent_near_optimum():
    problem, shards = make_quadratic_federation(d=4, N=3, heterogeneity=0.3, seed=3)
    assert estimate_alpha(problem, shards, ParamVector(problem.mean_center)) is None


def test_alpha_monotone_in_heterogeneity():
    values = []
    for het in (0.0, 0.1, 0.5, 1.0):
        problem, shards = make_quadratic_federation(d=16, N=8, heterogeneity=het, seed=5)
        values.append(estimate_alpha(problem, shards, problem.init_params()).alpha_hat)
    assert values[0] == 0.0
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


# -- rate fitting --------------------------------------------------------------

def test_fit_rate_planted_power_law():
    # plant metric values whose running average is exactly c/sqrt(t)
    c = 3.0
    cumulative = c * np.sqrt(np.arange(1, 101))
    values = np.diff(cumulative, prepend=0.0)
    records = [make_record(t + 1, grad_l1=v) for t, v in enumerate(values)]
    fit = fit_rate(records, "grad_l1")
    assert fit.slope == pytest.approx(-0.5, abs=1e-6)
    assert fit.r2 > 1 - 1e-12
    assert fit.excluded == 0


def test_fit_rate_planted_power_law_squared_metric():
    # plant grad_l1 so the running average of its square is exactly c/sqrt(t)
    c = 2.0
    cum_sq = c * np.sqrt(np.arange(1, 81))
    sq_values = np.diff(cum_sq, prepend=0.0)
    records = [make_record(t + 1, grad_l1=np.sqrt(v)) for t, v in enumerate(sq_values)]
    fit = fit_rate(records, "grad_l1_sq")
    assert fit.slope == pytest.approx(-0.5, abs=1e-6)


def test_fit_rate_constant_metric():
    records = [make_record(t, grad_l1=4.2) for t in range(1, 31)]
    fit = fit_rate(records)
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_needs_ten_records():
    records = [make_record(t) for t in range(1, 6)]
    with pytest.raises(ValueError):
        fit_rate(records)


def test_fit_rate_excludes_nonpositive():
    records = [make_record(t, grad_l1=(0.0 if t == 3 else 2.0)) for t in range(1, 21)]
    fit = fit_rate(records)
    assert fit.excluded == 1
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_unknown_metric():
    with pytest.raises(ValueError):
        fit_rate([make_record(t) for t in range(1, 11)], "loss")


# -- CSV emission --------------------------------------------------------------

def test_emit_header_only_for_empty_run(tmp_path):
    path = tmp_path / "empty.csv"
    emit_metrics([], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].split(",")[0] == "round"
    assert read_metrics(path) == []


def test_emit_three_rounds_four_lines(tmp_path):
    path = tmp_path / "three.csv"
    emit_metrics([make_record(t) for t in (1, 2, 3)], path)
    assert len(path.read_text().splitlines()) == 4


def test_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(4)
    records = [
        make_record(
            t,
            grad_l1=float(rng.uniform(0, 10)),
            train_loss=float(rng.standard_normal()),
            density=None if t == 2 else float(rng.uniform(1, 3)),
            alpha_hat=None if t == 3 else float(rng.uniform(0, 1)),
            uplink_bits=int(rng.integers(1, 10**9)),
        )
        for t in (1, 2, 3, 4)
    ]
    path = tmp_path / "roundtrip.csv"
    emit_metrics(records, path)
    assert read_metrics(path) == records


def test_read_metrics_rejects_foreign_header(tmp_path):
    path = tmp_path / "foreign.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_metrics(path)
