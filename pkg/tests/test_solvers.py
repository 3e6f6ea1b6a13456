import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

from spiderem.bench import run_one
from spiderem.data import synth_gmm
from spiderem.diagnostics import h_norm_sq, log_slope
from spiderem.gmm import GaussianMixture, estimate_lipschitz, init_params
from spiderem.model import Counters
from spiderem.samplers import Constant, Geometric, GrowingGeometric, split_rng
from spiderem.solvers import (
    DivergenceError,
    Fraction,
    Full,
    Growth,
    RunConfig,
    StepSchedule,
    _online_epochs,
    batch_em_run,
    gspider_run,
    online_em_run,
    randomized_terminate,
    run_strategy,
    spider_strategy,
)

from conftest import TOY


@pytest.fixture(scope="module")
def blobs():
    ds, _ = synth_gmm(3, 2, 600, 5.0, 11)
    model = GaussianMixture(ds.values, 3)
    return model, model.full_expectation(init_params(model.X, 3, split_rng(11, 0)))


def test_batch_em_stops_at_fixed_point(toy, toy_state):
    _, theta = toy_state
    star = batch_em_run(toy, theta, max_iter=5000).final_theta
    tr = batch_em_run(toy, star, max_iter=50)
    assert len(tr.records) == 1
    assert np.abs(tr.final_theta.means - star.means).max() <= 1e-9
    assert tr.records[0].cum_ce == toy.n


def _reference_em(y, w, mu, var, iters):
    """Textbook 1-D EM with scipy densities."""
    for _ in range(iters):
        dens = w * norm.pdf(y[:, None], mu, np.sqrt(var))
        r = dens / dens.sum(axis=1, keepdims=True)
        nk = r.sum(axis=0)
        w = nk / len(y)
        mu = (r * y[:, None]).sum(axis=0) / nk
        var = float((r * (y[:, None] - mu) ** 2).sum() / len(y))
    dens = w * norm.pdf(y[:, None], mu, np.sqrt(var))
    return dens / dens.sum(axis=1, keepdims=True)


def test_batch_em_matches_independent_reference(toy):
    theta = init_params(toy.X, 2, split_rng(1, 0))
    theta = type(theta)(np.array([0.3, 0.7]), np.array([[-0.5], [0.8]]), theta.covariance)
    tr = batch_em_run(toy, theta, max_iter=3000, tol=1e-13)
    ref = _reference_em(TOY[:, 0], theta.weights, theta.means[:, 0], theta.covariance[0, 0], 3000)
    ours = toy.expectations(np.arange(4), tr.final_theta)[:, :2]
    np.testing.assert_allclose(ours, ref, atol=1e-8)


def test_batch_em_counts_n_per_iteration(blobs):
    model, s0 = blobs
    tr = batch_em_run(model, model.t_map(s0), max_iter=7, tol=None)
    assert list(tr.column("cum_ce")) == [model.n * k for k in range(1, 8)]
    assert list(tr.column("cum_opt")) == list(range(1, 8))


def test_online_em_full_batch_unit_step_is_em(blobs):
    model, s0 = blobs
    cfg = RunConfig(b=model.n, k_out=1, steps=StepSchedule(gamma=1.0), replacement=False, updates_per_epoch=1)
    tr = online_em_run(model, s0, cfg)
    np.testing.assert_allclose(tr.final_s, model.full_expectation(model.t_map(s0)), rtol=0, atol=1e-12)


def test_online_em_zero_step_is_constant(blobs):
    model, s0 = blobs
    s = _online_epochs(model, s0, 2, 10, 5, 0.0, True, split_rng(0, 0), Counters())
    assert np.array_equal(s, s0)
    with pytest.raises(ValueError):
        StepSchedule(gamma=0.0)


def test_online_em_counter(blobs):
    model, s0 = blobs
    m = math.ceil(math.sqrt(model.n))
    tr = online_em_run(model, s0, RunConfig(b=m, k_out=3, diagnostics=False))
    assert list(tr.column("cum_ce")) == [e * m * m for e in (1, 2, 3)]


def test_warmstart_cost_reported_separately(blobs):
    model, s0 = blobs
    m = math.ceil(math.sqrt(model.n))
    tr = online_em_run(model, s0, RunConfig(b=m, k_out=2, warmstart_epochs=2, diagnostics=False))
    assert (tr.warm_epochs, tr.warm_ce, tr.warm_opt) == (2, 2 * m * m, 2 * m)
    assert tr.column("cum_ce")[0] == m * m


@pytest.mark.parametrize("schedule", [Constant(3), Geometric(0.6)])
def test_gspider_degenerates_to_batch_em(blobs, schedule):
    model, s0 = blobs
    cfg = RunConfig(b=model.n, k_out=4, schedule=schedule, steps=StepSchedule(gamma=1.0), replacement=False)
    tr = gspider_run(model, s0, cfg)
    steps = int(tr.column("xi").sum())
    s = s0
    for _ in range(steps):
        s = model.full_expectation(model.t_map(s))
    np.testing.assert_allclose(tr.final_s, s, rtol=0, atol=1e-12)


def test_counter_closed_form_large_setting():
    ds, _ = synth_gmm(2, 1, 10_000, 4.0, 0)
    model = GaussianMixture(ds.values, 2)
    s0 = model.full_expectation(init_params(model.X, 2, split_rng(0, 0)))
    cfg = RunConfig(b=100, k_out=10, schedule=Constant(50), steps=StepSchedule(gamma=0.05, gamma_reset=0.0),
                    diagnostics=False)
    tr = gspider_run(model, s0, cfg)
    assert tr.records[-1].cum_ce == 210_000
    assert tr.records[-1].cum_opt == 510


def test_subsampled_reset_costs(blobs):
    model, s0 = blobs
    n, b, k = model.n, 5, 4
    cfg = RunConfig(b=b, k_out=3, schedule=Constant(k), reset=Fraction(0.5), diagnostics=False)
    ce = gspider_run(model, s0, cfg).column("cum_ce")
    t = np.arange(1, 4)
    assert list(ce) == list(n // 2 + t * (n // 2) + 2 * b * k * t)
    grow = Growth(20, 50)
    assert [grow.size(60_000, t) for t in (1, 10, 55, 60)] == [1200, 2000, 60_000, 60_000]
    assert [grow.size(100, t) for t in (1, 2, 3)] == [20, 80, 100]


def test_fraction_one_is_full(blobs):
    model, s0 = blobs
    cfg = RunConfig(b=8, k_out=4, schedule=Geometric(0.8), seed=3, steps=StepSchedule(gamma=0.05))
    a = gspider_run(model, s0, cfg)
    b = gspider_run(model, s0, replace(cfg, reset=Fraction(1.0)))
    assert a.to_csv() == b.to_csv()
    assert np.array_equal(a.final_s, b.final_s)


def test_recorded_h2_is_full_pass_mean_field(blobs):
    model, s0 = blobs
    tr = gspider_run(model, s0, RunConfig(b=8, k_out=3, schedule=Constant(5), steps=StepSchedule(gamma=0.05)))
    for r in tr.records:
        assert r.h2 == pytest.approx(h_norm_sq(model, r.s_end), rel=1e-10, abs=1e-14)


def test_reset_step_path(blobs):
    model, s0 = blobs
    cfg = RunConfig(b=8, k_out=3, schedule=Constant(4), steps=StepSchedule(gamma=0.05, gamma_reset=1.0))
    tr = gspider_run(model, s0, cfg)
    for r in tr.records:
        # with a full reset and unit reset step, S_hat[t,0] is one EM step from S_hat[t,-1]
        np.testing.assert_allclose(r.s_reset, model.full_expectation(model.t_map(r.s_start)), atol=1e-12)
        assert not np.allclose(r.s_reset, r.s_start)
    base = gspider_run(model, s0, replace(cfg, steps=StepSchedule(gamma=0.05)))
    assert list(base.column("cum_opt")) == list(tr.column("cum_opt"))
    assert all(np.array_equal(r.s_reset, r.s_start) for r in base.records)


def test_alpha_step_rule(blobs):
    model, s0 = blobs
    cfg = RunConfig(b=8, k_out=1, schedule=Constant(2), steps=StepSchedule(alpha=0.5, lipschitz_probes=4))
    tr = gspider_run(model, s0, cfg)
    L = estimate_lipschitz(model, 4, 1e-2, seed=0, reference=s0)
    assert tr.gamma == pytest.approx(0.5 / L)


def test_strategy_table():
    n, b = 60_000, 245
    sched, reset = spider_strategy("full-ctt", n, b)
    assert sched == Constant(123) and reset == Full()
    sched, _ = spider_strategy("full-geom", n, b)
    assert 1 / (1 - sched.rho) == pytest.approx(n / (2 * b))
    assert 2 * b * sched.mean() == pytest.approx(n, rel=1e-6)
    sched, reset = spider_strategy("quad-geom", n, b)
    assert isinstance(sched, GrowingGeometric) and isinstance(reset, Growth)
    assert 1 / (1 - sched.at(1).rho) == pytest.approx(1200 / 490)
    assert spider_strategy("half-ctt", n, b)[1] == Fraction(0.5)
    assert spider_strategy("quad-ctt", n, b)[0] == Constant(123)
    with pytest.raises(ValueError):
        spider_strategy("full-sgd", n, b)


def test_quad_geom_small_epochs_fall_back_to_one_step():
    # mean below one inner step: every epoch runs exactly once
    assert GrowingGeometric(100, 10).at(1) == Constant(1)


def test_randomized_termination(toy, toy_state):
    s0, _ = toy_state
    one = gspider_run(toy, s0, RunConfig(b=2, k_out=1, steps=StepSchedule(gamma=0.1)))
    rng = split_rng(0, 0)
    assert all(randomized_terminate(one, rng)[0] == 1 for _ in range(50))
    four = gspider_run(toy, s0, RunConfig(b=2, k_out=4, steps=StepSchedule(gamma=0.1)))
    counts = np.zeros(4)
    for _ in range(100_000):
        T, s = randomized_terminate(four, rng)
        counts[T - 1] += 1
        assert s is four.records[T - 1].s_end
    assert np.abs(counts - 25_000).max() <= 4 * math.sqrt(100_000 * 0.25 * 0.75)


def test_lock_in_linear_rate():
    ds, _ = synth_gmm(3, 2, 2000, 6.0, 4)
    model = GaussianMixture(ds.values, 3)
    s0 = model.full_expectation(init_params(model.X, 3, split_rng(4, 0)))
    b = math.ceil(math.sqrt(model.n))
    for name in ("full-ctt", "full-geom"):
        tr = run_strategy(model, s0, name, RunConfig(b=b, k_out=16, seed=2, steps=StepSchedule(gamma=0.05),
                                                       warmstart_epochs=2))
        assert log_slope(tr.column("h2"), last=8) < 0


def test_divergence_is_reported_with_trace(toy):
    bad = np.array([-1.0, -1.0, 0.0, 0.0, 1.0])
    with pytest.raises(DivergenceError) as info:
        gspider_run(toy, bad, RunConfig(b=2, k_out=2, strategy="full-ctt"))
    assert info.value.trace.diverged and info.value.trace.strategy == "full-ctt"
    tr = run_one(toy, bad, "full-ctt", RunConfig(b=2, k_out=2, strategy="full-ctt"))
    assert tr.diverged and tr.message


def test_config_validation():
    with pytest.raises(ValueError, match="k_out"):
        RunConfig(b=1, k_out=0)
    with pytest.raises(ValueError) as info:
        RunConfig(b=0, k_out=1, warmstart_epochs=-1)
    assert "b must" in str(info.value) and "warmstart" in str(info.value)
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            Fraction(bad)
    with pytest.raises(ValueError):
        StepSchedule(gamma=0.1, gamma_reset=-1)


def test_same_seed_same_trace(blobs):
    model, s0 = blobs
    cfg = RunConfig(b=8, k_out=3, schedule=Geometric(0.7), seed=9, replication=2)
    a, b = gspider_run(model, s0, cfg), gspider_run(model, s0, cfg)
    assert a.to_csv() == b.to_csv()
    c = gspider_run(model, s0, replace(cfg, replication=3))
    assert a.to_csv() != c.to_csv()
